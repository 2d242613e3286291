"""Exact tabular solvers and bound checkers for lookahead policy iteration.

Everything here is computed to numerical exactness (direct linear solves,
value iteration to 1e-12 residual), so a reported bound violation beyond the
1e-9 slack means an implementation bug, not noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DomainError, NumericsError
from .tabular import (
    GRAPH_CHOICE,
    GRAPH_GOOD_TERMINAL,
    GRAPH_LEFT_START,
    GRAPH_POOR_TERMINAL,
    GRAPH_RIGHT_START,
    TabularMDP,
    build_graph_world,
    sample_random_mdp,
)

SLACK = 1e-9
VI_RESIDUAL = 1e-12
SOLVE_RESIDUAL = 1e-8
LOOKAHEAD_GUARD = 1e5


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def deterministic_policy(mdp: TabularMDP, actions: np.ndarray) -> np.ndarray:
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), actions] = 1.0
    return pi


def policy_value(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """V^pi from the linear system (I - gamma P_pi) V = r_pi."""
    p_pi = np.einsum("sa,sat->st", policy, mdp.transitions)
    r_pi = np.einsum("sa,sa->s", policy, mdp.rewards)
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    v = np.linalg.solve(a, r_pi)
    residual = np.max(np.abs(a @ v - r_pi))
    if residual > SOLVE_RESIDUAL:
        raise NumericsError(f"policy evaluation residual {residual:g}")
    return v


def q_from_v(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    return mdp.rewards + mdp.gamma * (mdp.transitions @ v)


def optimal_value(mdp: TabularMDP) -> np.ndarray:
    v = np.zeros(mdp.n_states)
    for _ in range(1_000_000):
        tv = q_from_v(mdp, v).max(axis=1)
        if np.max(np.abs(tv - v)) < VI_RESIDUAL:
            return tv
        v = tv
    raise NumericsError("value iteration did not reach residual tolerance")


def greedy_policy(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    """One-step greedy on v; argmax ties resolve to the lowest action index."""
    return deterministic_policy(mdp, np.argmax(q_from_v(mdp, v), axis=1))


def h_step_policy(mdp: TabularMDP, v_hat: np.ndarray, horizon: int) -> np.ndarray:
    """Exact H-step lookahead on the true model with terminal value v_hat.

    Computed by nested Bellman backups, i.e. the optimum over all H-step
    behaviors, which is what a zero-suboptimality planner achieves.
    """
    if horizon < 1:
        raise ConfigurationError(f"lookahead horizon must be >= 1, got {horizon}")
    if mdp.n_actions**horizon > LOOKAHEAD_GUARD:
        raise ConfigurationError(
            f"lookahead enumeration {mdp.n_actions}^{horizon} exceeds {LOOKAHEAD_GUARD:g}"
        )
    w = np.asarray(v_hat, dtype=np.float64)
    for _ in range(horizon - 1):
        w = q_from_v(mdp, w).max(axis=1)
    return deterministic_policy(mdp, np.argmax(q_from_v(mdp, w), axis=1))


def tv_max(pi_a: np.ndarray, pi_b: np.ndarray) -> float:
    """max over states of the total-variation distance between action rows."""
    return float(np.max(0.5 * np.sum(np.abs(pi_a - pi_b), axis=1)))


def expected_return(mdp: TabularMDP, v: np.ndarray) -> float:
    return float(mdp.rho0 @ v)


# noise injection -----------------------------------------------------------

NOISE_KINDS = ("uniform-sign", "adversarial-max", "spike")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    eps: float

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(
                f"unknown noise kind '{self.kind}', expected one of {NOISE_KINDS}"
            )
        if self.eps < 0.0:
            raise ConfigurationError(f"noise eps must be >= 0, got {self.eps}")


def corrupt_values(v: np.ndarray, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Returns v plus noise whose sup-norm equals noise.eps exactly (eps > 0)."""
    out = np.array(v, dtype=np.float64, copy=True)
    if noise.eps == 0.0:
        return out
    if noise.kind == "uniform-sign":
        out += noise.eps * np.where(rng.random(v.shape) < 0.5, -1.0, 1.0)
    elif noise.kind == "adversarial-max":
        out += noise.eps
    else:  # spike
        i = int(rng.integers(0, v.size))
        out[i] += noise.eps if rng.random() < 0.5 else -noise.eps
    return out


# approximate policy iteration with injected evaluation noise ---------------


@dataclass
class ApiIterate:
    k: int
    policy: np.ndarray
    value: np.ndarray
    v_hat: np.ndarray
    eps: float
    lookahead_policy: np.ndarray
    lookahead_value: np.ndarray
    delta: float


def api_with_noise(
    mdp: TabularMDP,
    noise: NoiseSpec,
    horizon: int,
    iterations: int,
    seed: int,
) -> list[ApiIterate]:
    """Greedy API from a uniform pi_0; each iterate also records the H-step
    lookahead policy built on the same corrupted values."""
    if iterations < 1:
        raise ConfigurationError("api_with_noise needs at least 1 iteration")
    rng = np.random.default_rng(seed)
    trace: list[ApiIterate] = []
    policy = uniform_policy(mdp)
    for k in range(iterations):
        value = policy_value(mdp, policy)
        v_hat = corrupt_values(value, noise, rng)
        look = h_step_policy(mdp, v_hat, horizon)
        look_value = policy_value(mdp, look)
        trace.append(
            ApiIterate(
                k=k,
                policy=policy,
                value=value,
                v_hat=v_hat,
                eps=float(np.max(np.abs(v_hat - value))),
                lookahead_policy=look,
                lookahead_value=look_value,
                delta=float(np.max(np.abs(look_value - value))),
            )
        )
        policy = greedy_policy(mdp, v_hat)
    return trace


# bound reports -------------------------------------------------------------


@dataclass
class BoundReport:
    """lhs is always the side that must be smaller; holds <=> lhs <= rhs + slack."""

    theorem: str
    lhs: float
    rhs: float
    constants: dict = field(default_factory=dict)
    seed: int | None = None
    holds: bool = False

    def __post_init__(self):
        self.holds = bool(self.lhs <= self.rhs + SLACK)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def model_horizon_error(eps_m: float, horizon: int, gamma: float, r_max: float) -> float:
    """Compounding model-error cost of an H-step rollout plus terminal bootstrap."""
    if eps_m < 0.0 or not 0.0 < gamma < 1.0 or horizon < 1:
        raise ConfigurationError("model_horizon_error: bad arguments")
    v_max = r_max / (1.0 - gamma)
    rollout = r_max * sum(gamma**t * t * eps_m for t in range(horizon))
    return rollout + gamma**horizon * horizon * eps_m * v_max


def check_lookahead_suboptimality(
    mdp: TabularMDP,
    v_hat: np.ndarray,
    horizon: int,
    v_star: np.ndarray | None = None,
) -> BoundReport:
    """Exact-planner lookahead bound: value loss <= 2 gamma^H xi / (1 - gamma^H)."""
    if v_star is None:
        v_star = optimal_value(mdp)
    pi_h = h_step_policy(mdp, v_hat, horizon)
    v_pi_h = policy_value(mdp, pi_h)
    xi = float(np.max(np.abs(v_star - v_hat)))
    g = mdp.gamma
    rhs = 2.0 * g**horizon * xi / (1.0 - g**horizon)
    lhs = float(np.max(v_star - v_pi_h))
    j_gap = expected_return(mdp, v_star) - expected_return(mdp, v_pi_h)
    return BoundReport(
        theorem="lookahead-suboptimality",
        lhs=lhs,
        rhs=rhs,
        constants={
            "gamma": g,
            "H": horizon,
            "xi": xi,
            "j_gap": j_gap,
            "r_max": mdp.r_max,
        },
        seed=mdp.seed,
    )


def check_theorem1(mdp: TabularMDP, trace: list[ApiIterate], horizon: int) -> list[BoundReport]:
    v_star = optimal_value(mdp)
    return [
        check_lookahead_suboptimality(mdp, it.v_hat, horizon, v_star=v_star)
        for it in trace
    ]


def _tail(xs: list[float], frac: float = 0.25) -> list[float]:
    n = max(1, int(np.ceil(frac * len(xs))))
    return xs[-n:]


def check_theorem1_limsup(
    mdp: TabularMDP, trace: list[ApiIterate], horizon: int
) -> BoundReport:
    """Asymptotic composed bound, checked over the trace tail as evidence."""
    v_star = optimal_value(mdp)
    g = mdp.gamma
    lhs_seq = [float(np.max(np.abs(v_star - it.lookahead_value))) for it in trace]
    rhs_seq = [
        2.0 / (1.0 - g**horizon) * (g**horizon * (1.0 + g**2) / (1.0 - g) ** 2) * it.eps
        for it in trace
    ]
    return BoundReport(
        theorem="lookahead-limsup",
        lhs=max(_tail(lhs_seq)),
        rhs=max(_tail(rhs_seq)),
        constants={"gamma": g, "H": horizon, "iterations": len(trace)},
        seed=mdp.seed,
    )


def check_theorem2(mdp: TabularMDP, trace: list[ApiIterate], horizon: int) -> list[BoundReport]:
    """Gap recursion between consecutive API iterates (exact model, exact planner)."""
    g = mdp.gamma
    reports = []
    for prev, cur in zip(trace, trace[1:]):
        rhs = (
            (1.0 + g**horizon) * prev.delta
            + 2.0 * g * (1.0 + g ** (horizon - 1)) / (1.0 - g) * prev.eps
        ) / (1.0 - g**horizon)
        reports.append(
            BoundReport(
                theorem="gap-recursion",
                lhs=cur.delta,
                rhs=rhs,
                constants={
                    "gamma": g,
                    "H": horizon,
                    "k": cur.k,
                    "delta_prev": prev.delta,
                    "eps_prev": prev.eps,
                },
                seed=mdp.seed,
            )
        )
    return reports


def check_theorem3(mdp: TabularMDP, pi_a: np.ndarray, pi_b: np.ndarray) -> BoundReport:
    """Divergence lower bound: scaled |J gap| must not exceed max TV distance."""
    j_a = expected_return(mdp, policy_value(mdp, pi_a))
    j_b = expected_return(mdp, policy_value(mdp, pi_b))
    lhs = (1.0 - mdp.gamma) ** 2 / (2.0 * mdp.r_max) * abs(j_a - j_b)
    rhs = tv_max(pi_a, pi_b)
    return BoundReport(
        theorem="policy-divergence",
        lhs=lhs,
        rhs=rhs,
        constants={"gamma": mdp.gamma, "r_max": mdp.r_max, "j_gap": j_a - j_b},
        seed=mdp.seed,
    )


def check_lemma_greedy(
    mdp: TabularMDP, v_hat: np.ndarray, v_star: np.ndarray | None = None
) -> BoundReport:
    """Greedy-on-corrupted-values bound: value loss <= 2 gamma xi / (1 - gamma)."""
    if v_star is None:
        v_star = optimal_value(mdp)
    pi = greedy_policy(mdp, v_hat)
    v_pi = policy_value(mdp, pi)
    xi = float(np.max(np.abs(v_star - v_hat)))
    return BoundReport(
        theorem="greedy-value-loss",
        lhs=float(np.max(v_star - v_pi)),
        rhs=2.0 * mdp.gamma * xi / (1.0 - mdp.gamma),
        constants={"gamma": mdp.gamma, "xi": xi},
        seed=mdp.seed,
    )


def check_api_value_loss_limsup(mdp: TabularMDP, trace: list[ApiIterate]) -> BoundReport:
    """API value-loss band over the trace tail (evidence for the asymptotic claim)."""
    v_star = optimal_value(mdp)
    g = mdp.gamma
    lhs_seq = [float(np.max(np.abs(v_star - it.value))) for it in trace]
    rhs_seq = [2.0 * g / (1.0 - g) ** 2 * it.eps for it in trace]
    return BoundReport(
        theorem="api-value-loss-limsup",
        lhs=max(_tail(lhs_seq)),
        rhs=max(_tail(rhs_seq)),
        constants={"gamma": g, "iterations": len(trace)},
        seed=mdp.seed,
    )


def check_greedy_limsup(mdp: TabularMDP, trace: list[ApiIterate]) -> BoundReport:
    """Composed greedy-policy band over the trace tail."""
    v_star = optimal_value(mdp)
    g = mdp.gamma
    # policy at iterate k+1 is greedy on v_hat_k, so skip the uniform pi_0
    lhs_seq = [float(np.max(np.abs(v_star - it.value))) for it in trace[1:]]
    rhs_seq = [2.0 * g * (1.0 + g**2) / (1.0 - g) ** 3 * it.eps for it in trace[:-1]]
    return BoundReport(
        theorem="greedy-limsup",
        lhs=max(_tail(lhs_seq)),
        rhs=max(_tail(rhs_seq)),
        constants={"gamma": g, "iterations": len(trace)},
        seed=mdp.seed,
    )


def write_reports_csv(reports: list[BoundReport], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["theorem", "seed", "gamma", "H", "lhs", "rhs", "slack", "holds"])
        for r in reports:
            w.writerow(
                [
                    r.theorem,
                    r.seed if r.seed is not None else "",
                    r.constants.get("gamma", ""),
                    r.constants.get("H", ""),
                    repr(r.lhs),
                    repr(r.rhs),
                    repr(r.slack),
                    int(r.holds),
                ]
            )


# six-state mismatch experiment ---------------------------------------------


@dataclass
class GraphMismatchReport:
    delta: float
    episodes: int
    poor_visited_by_lookahead: bool
    residual_error: float
    greedy_first_visit_episode: int | None
    right_action_before: int
    right_action_after: int
    lookahead_paths: list[list[int]]
    greedy_path: list[int]


def _step_deterministic(mdp: TabularMDP, s: int, a: int) -> int:
    return int(np.argmax(mdp.transitions[s, a]))


def _lookahead_action(mdp: TabularMDP, v_hat: np.ndarray, s: int) -> int:
    q = mdp.rewards[s] + mdp.gamma * (mdp.transitions[s] @ v_hat)
    return int(np.argmax(q))


def _greedy_successor_action(mdp: TabularMDP, v_hat: np.ndarray, s: int) -> int:
    succ = np.argmax(mdp.transitions[s], axis=1)
    return int(np.argmax(v_hat[succ]))


def graph_world_mismatch(
    delta: float = 0.5,
    episodes: int = 100,
    gamma: float = 1.0 / 3.0,
    good_reward: float = 10.0,
    poor_reward: float = 1.0,
    max_steps: int = 10,
) -> GraphMismatchReport:
    """Replays the two-terminal trap: a 1-step lookahead agent started on the
    left never visits the overestimated poor terminal (so the error persists),
    a successor-value greedy agent corrects it immediately, and the right
    start is initially misled.

    Visited states have their value estimate snapped to the true value.
    """
    if delta < 0.0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    mdp = build_graph_world(
        good_reward=good_reward, poor_reward=poor_reward, gamma=gamma, start="left"
    )
    v_star = optimal_value(mdp)
    tp, tg = GRAPH_POOR_TERMINAL, GRAPH_GOOD_TERMINAL

    def fresh_v_hat() -> np.ndarray:
        v = np.array(v_star, copy=True)
        v[tp] += delta
        return v

    # guard: the known reward-10 edge must still dominate at the choice node
    guard = fresh_v_hat()
    if _lookahead_action(mdp, guard, GRAPH_CHOICE) != 0:
        raise DomainError(
            f"delta={delta} overwhelms the good branch; lower it below "
            f"{(good_reward - poor_reward) / gamma:g}"
        )

    # (a, b): lookahead agent from the left, with on-visit correction
    v_hat = fresh_v_hat()
    poor_visited = False
    paths: list[list[int]] = []
    for _ in range(episodes):
        s = GRAPH_LEFT_START
        v_hat[s] = v_star[s]
        path = [s]
        for _ in range(max_steps):
            if mdp.terminal[s]:
                break
            s = _step_deterministic(mdp, s, _lookahead_action(mdp, v_hat, s))
            v_hat[s] = v_star[s]
            path.append(s)
            if s == tp:
                poor_visited = True
        paths.append(path)
    residual = float(v_hat[tp] - v_star[tp])

    # (c): successor-value greedy agent from the left
    v_hat_g = fresh_v_hat()
    greedy_first_visit = None
    greedy_path: list[int] = []
    for ep in range(1, episodes + 1):
        s = GRAPH_LEFT_START
        v_hat_g[s] = v_star[s]
        path = [s]
        for _ in range(max_steps):
            if mdp.terminal[s]:
                break
            s = _step_deterministic(mdp, s, _greedy_successor_action(mdp, v_hat_g, s))
            v_hat_g[s] = v_star[s]
            path.append(s)
            if s == tp and greedy_first_visit is None:
                greedy_first_visit = ep
        if ep == 1:
            greedy_path = path
        if greedy_first_visit is not None:
            break

    # (d): right-start action before and after the terminal error is corrected
    before = _lookahead_action(mdp, fresh_v_hat(), GRAPH_RIGHT_START)
    after = _lookahead_action(mdp, v_star, GRAPH_RIGHT_START)

    return GraphMismatchReport(
        delta=delta,
        episodes=episodes,
        poor_visited_by_lookahead=poor_visited,
        residual_error=residual,
        greedy_first_visit_episode=greedy_first_visit,
        right_action_before=before,
        right_action_after=after,
        lookahead_paths=paths,
        greedy_path=greedy_path,
    )


# full verification sweeps ---------------------------------------------------


def _random_small_mdp(seed: int, rng: np.random.Generator) -> TabularMDP:
    return sample_random_mdp(
        seed=seed,
        n_states=int(rng.integers(2, 9)),
        n_actions=int(rng.integers(2, 5)),
        gamma=0.9 if rng.random() < 0.5 else 0.99,
    )


def sweep_policy_divergence(n_mdps: int = 200, seed: int = 0) -> list[BoundReport]:
    """Divergence lower bound over random MDPs and random policy pairs."""
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_mdps):
        mdp = _random_small_mdp(seed + i, rng)
        pi_a = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
        pi_b = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
        reports.append(check_theorem3(mdp, pi_a, pi_b))
    return reports


def sweep_lookahead_bound(
    n_mdps: int = 100,
    horizons: tuple = (1, 2, 3),
    noise_levels: tuple = (0.1, 0.5, 1.0),
    seed: int = 0,
) -> list[BoundReport]:
    """Exact-planner suboptimality bound over MDP x horizon x noise level."""
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_mdps):
        mdp = _random_small_mdp(seed + i, rng)
        v_star = optimal_value(mdp)
        for xi in noise_levels:
            kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
            v_hat = corrupt_values(v_star, NoiseSpec(kind, xi), rng)
            for h in horizons:
                reports.append(
                    check_lookahead_suboptimality(mdp, v_hat, h, v_star=v_star)
                )
    return reports


def sweep_gap_recursion(
    n_mdps: int = 50,
    iterations: int = 20,
    horizons: tuple = (1, 3),
    seed: int = 0,
) -> list[BoundReport]:
    """Noise-free gap recursion across consecutive API iterates."""
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_mdps):
        mdp = _random_small_mdp(seed + i, rng)
        for h in horizons:
            trace = api_with_noise(
                mdp, NoiseSpec("uniform-sign", 0.0), h, iterations, seed + i
            )
            reports.extend(check_theorem2(mdp, trace, h))
    return reports


def sweep_greedy_bound(n_cases: int = 200, seed: int = 0) -> list[BoundReport]:
    """Greedy-on-corrupted-values bound over random corruption cases."""
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_cases):
        mdp = _random_small_mdp(seed + i, rng)
        v_star = optimal_value(mdp)
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        xi = float(rng.uniform(0.05, 1.0))
        v_hat = corrupt_values(v_star, NoiseSpec(kind, xi), rng)
        reports.append(check_lemma_greedy(mdp, v_hat, v_star=v_star))
    return reports


THEOREM_SWEEPS = {
    "1": ("lookahead suboptimality bound", sweep_lookahead_bound),
    "2": ("API gap recursion", sweep_gap_recursion),
    "3": ("policy divergence lower bound", sweep_policy_divergence),
    "lemma-a2": ("greedy corrupted-value bound", sweep_greedy_bound),
}
