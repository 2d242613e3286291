"""Finite MDPs: container, random generator, and the six-state mismatch graph."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

PROB_ATOL = 1e-9


@dataclass
class TabularMDP:
    """Finite MDP with dense transition and reward tables.

    transitions: (S, A, S) row-stochastic. rewards: (S, A) in [0, r_max].
    rho0: initial distribution over states. terminal: bool mask of absorbing
    states whose rewards are all zero.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    rho0: np.ndarray
    terminal: np.ndarray = field(default=None)
    r_max: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)
        s, a, s2 = self.transitions.shape
        if s != s2 or self.rewards.shape != (s, a):
            raise ConfigurationError(
                f"inconsistent tables: transitions {self.transitions.shape}, "
                f"rewards {self.rewards.shape}"
            )
        if self.terminal is None:
            self.terminal = np.zeros(s, dtype=bool)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1), got {self.gamma}")
        rowsums = self.transitions.sum(axis=-1)
        if np.max(np.abs(rowsums - 1.0)) > PROB_ATOL:
            raise ConfigurationError("transition rows must sum to 1")
        if np.any(self.transitions < -PROB_ATOL):
            raise ConfigurationError("negative transition probability")
        if abs(self.rho0.sum() - 1.0) > PROB_ATOL or np.any(self.rho0 < -PROB_ATOL):
            raise ConfigurationError("rho0 must be a distribution over states")
        if np.any(self.rewards < -PROB_ATOL) or np.any(self.rewards > self.r_max + PROB_ATOL):
            raise ConfigurationError(f"rewards must lie in [0, r_max={self.r_max}]")
        for t in np.flatnonzero(self.terminal):
            if not np.allclose(self.transitions[t, :, t], 1.0, atol=PROB_ATOL):
                raise ConfigurationError(f"terminal state {t} is not absorbing")
            if np.any(self.rewards[t] != 0.0):
                raise ConfigurationError(f"terminal state {t} has nonzero reward")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)


def sample_random_mdp(
    seed: int,
    n_states: int = 6,
    n_actions: int = 3,
    gamma: float = 0.9,
    r_max: float = 1.0,
    sparsity: float = 0.0,
) -> TabularMDP:
    """Random MDP with Dirichlet-like rows.

    sparsity in [0, 1] is the transition mass forced onto one successor per
    (s, a); sparsity = 1 gives a deterministic MDP.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ConfigurationError(f"sparsity must be in [0, 1], got {sparsity}")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0.0:
        picks = rng.integers(0, n_states, size=(n_states, n_actions))
        onehot = np.zeros_like(P)
        s_idx, a_idx = np.meshgrid(
            np.arange(n_states), np.arange(n_actions), indexing="ij"
        )
        onehot[s_idx, a_idx, picks] = 1.0
        P = sparsity * onehot + (1.0 - sparsity) * P
    R = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    rho0 = np.full(n_states, 1.0 / n_states)
    return TabularMDP(
        transitions=P, rewards=R, gamma=gamma, rho0=rho0, r_max=r_max, seed=seed
    )


# Six-state mismatch graph. State order: left start, right start, choice node,
# right corridor, good terminal, poor terminal. Terminal payoffs sit on the
# edges into the terminals; terminal states themselves are absorbing at zero.
GRAPH_LEFT_START = 0
GRAPH_RIGHT_START = 1
GRAPH_CHOICE = 2
GRAPH_CORRIDOR = 3
GRAPH_GOOD_TERMINAL = 4
GRAPH_POOR_TERMINAL = 5


def build_graph_world(
    good_reward: float = 10.0,
    poor_reward: float = 1.0,
    gamma: float = 1.0 / 3.0,
    start: str = "left",
) -> TabularMDP:
    """Two-terminal graph where a small value error at the poor terminal
    misleads a myopic agent started on the right but not on the left.

    Low gamma keeps the discounted pull of the distant good terminal close to
    the poor terminal's payoff as seen from the right start, so a sub-unit
    overestimate there is decision-relevant.
    """
    if start not in ("left", "right"):
        raise ConfigurationError(f"start must be 'left' or 'right', got '{start}'")
    n = 6
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    L, Rt, M, C, TG, TP = range(6)
    P[L, 0, M] = 1.0
    P[L, 1, C] = 1.0
    P[Rt, 0, TP] = 1.0
    R[Rt, 0] = poor_reward
    P[Rt, 1, C] = 1.0
    P[M, 0, TG] = 1.0
    R[M, 0] = good_reward
    P[M, 1, TP] = 1.0
    R[M, 1] = poor_reward
    P[C, 0, M] = 1.0
    P[C, 1, TP] = 1.0
    R[C, 1] = poor_reward
    for t in (TG, TP):
        P[t, :, t] = 1.0
    rho0 = np.zeros(n)
    rho0[L if start == "left" else Rt] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[[TG, TP]] = True
    return TabularMDP(
        transitions=P,
        rewards=R,
        gamma=gamma,
        rho0=rho0,
        terminal=terminal,
        r_max=max(good_reward, poor_reward),
    )


def graph_reachable_terminals(mdp: TabularMDP, from_state: int) -> set[int]:
    """Terminal states reachable from `from_state` under some action sequence."""
    seen = {from_state}
    frontier = [from_state]
    while frontier:
        s = frontier.pop()
        for a in range(mdp.n_actions):
            for s2 in np.flatnonzero(mdp.transitions[s, a] > 0.0):
                if s2 not in seen:
                    seen.add(int(s2))
                    frontier.append(int(s2))
    return {int(t) for t in np.flatnonzero(mdp.terminal) if t in seen}
