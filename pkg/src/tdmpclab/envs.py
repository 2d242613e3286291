"""Analytic toy environments: continuous-control stand-ins plus tabular MDPs.

Continuous toys integrate with explicit Euler (dt=0.05) over 200-step
episodes and emit rewards in (0, 1]. Out-of-bounds actions are clipped and
counted; non-finite actions are rejected. Tabular environments wrap a
TabularMDP with one-hot observations and integer actions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .tabular import TabularMDP, build_graph_world, sample_random_mdp

log = logging.getLogger(__name__)

DT = 0.05
EPISODE_LEN = 200
ENV_NAMES = ("point-mass-chain", "pendulum", "double-integrator",
             "graph-world", "tabular-random")


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    episode_len: int
    r_max: float = 1.0
    discrete_actions: int | None = None


class ContinuousEnv:
    """Shared plumbing: action validation/clipping, step counting, done flag."""

    spec: EnvSpec

    def __init__(self):
        self.t = 0
        self.clip_warnings = 0
        self._warned = False

    def _prepare_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != self.spec.action_dim:
            raise DomainError(
                f"{self.spec.name} expects {self.spec.action_dim} action dims, "
                f"got {a.shape[0]}"
            )
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite action for {self.spec.name}: {a}")
        if np.any(np.abs(a) > 1.0):
            self.clip_warnings += 1
            if not self._warned:
                log.warning("%s: clipping out-of-bounds action (counted)",
                            self.spec.name)
                self._warned = True
            a = np.clip(a, -1.0, 1.0)
        return a

    def step(self, action):
        a = self._prepare_action(action)
        obs, reward = self._advance(a)
        self.t += 1
        done = self.t >= self.spec.episode_len
        return obs, float(reward), done

    def is_terminal(self) -> bool:
        return False

    def get_state(self) -> dict:
        return {"t": np.int64(self.t),
                "clip_warnings": np.int64(self.clip_warnings)}

    def set_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.clip_warnings = int(state["clip_warnings"])


class PointMassChain(ContinuousEnv):
    """d-dimensional double integrator steered toward a fixed goal at 0.5."""

    def __init__(self, dim: int):
        if not 2 <= dim <= 16:
            raise ConfigurationError(
                f"point-mass-chain dim must be in [2, 16], got {dim}"
            )
        super().__init__()
        self.dim = dim
        self.spec = EnvSpec("point-mass-chain", obs_dim=2 * dim,
                            action_dim=dim, episode_len=EPISODE_LEN)
        self.goal = np.full(dim, 0.5)
        self.pos = np.zeros(dim)
        self.vel = np.zeros(dim)

    def reset(self, seed: int = 0) -> np.ndarray:
        self.t = 0
        self.pos = np.zeros(self.dim)
        self.vel = np.zeros(self.dim)
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def _advance(self, a):
        self.pos = self.pos + DT * self.vel
        self.vel = self.vel + DT * a
        reward = np.exp(-np.sum((self.pos - self.goal) ** 2))
        return self._obs(), reward

    def get_state(self):
        state = super().get_state()
        state.update({"pos": self.pos.copy(), "vel": self.vel.copy()})
        return state

    def set_state(self, state):
        super().set_state(state)
        self.pos = np.array(state["pos"])
        self.vel = np.array(state["vel"])


class DoubleIntegrator(ContinuousEnv):
    """1-D point mass started at position 1, rewarded for resting at 0."""

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec("double-integrator", obs_dim=2, action_dim=1,
                            episode_len=EPISODE_LEN)
        self.pos = 1.0
        self.vel = 0.0

    def reset(self, seed: int = 0) -> np.ndarray:
        self.t = 0
        self.pos, self.vel = 1.0, 0.0
        return np.array([self.pos, self.vel])

    def _advance(self, a):
        self.pos = self.pos + DT * self.vel
        self.vel = self.vel + DT * float(a[0])
        reward = np.exp(-(self.pos ** 2 + 0.1 * self.vel ** 2))
        return np.array([self.pos, self.vel]), reward

    def get_state(self):
        state = super().get_state()
        state.update({"pos": np.float64(self.pos), "vel": np.float64(self.vel)})
        return state

    def set_state(self, state):
        super().set_state(state)
        self.pos = float(state["pos"])
        self.vel = float(state["vel"])


def angle_wrap(theta: float) -> float:
    return ((theta + np.pi) % (2.0 * np.pi)) - np.pi


class Pendulum(ContinuousEnv):
    """Torque-limited swing-up; angle 0 is upright. Seeded random starts."""

    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec("pendulum", obs_dim=3, action_dim=1,
                            episode_len=EPISODE_LEN)
        self.theta = 0.0
        self.theta_dot = 0.0

    def reset(self, seed: int = 0) -> np.ndarray:
        self.t = 0
        rng = np.random.default_rng(seed)
        self.theta = float(rng.uniform(-np.pi, np.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta),
                         self.theta_dot])

    def _advance(self, a):
        u = self.MAX_TORQUE * float(a[0])
        g, m, length = self.GRAVITY, self.MASS, self.LENGTH
        acc = (3.0 * g / (2.0 * length) * np.sin(self.theta)
               + 3.0 / (m * length ** 2) * u)
        new_theta = self.theta + DT * self.theta_dot
        new_dot = np.clip(self.theta_dot + DT * acc,
                          -self.MAX_SPEED, self.MAX_SPEED)
        self.theta, self.theta_dot = float(new_theta), float(new_dot)
        wrapped = angle_wrap(self.theta)
        reward = np.exp(-(wrapped ** 2 + 0.1 * self.theta_dot ** 2))
        return self._obs(), reward

    def get_state(self):
        state = super().get_state()
        state.update({"theta": np.float64(self.theta),
                      "theta_dot": np.float64(self.theta_dot)})
        return state

    def set_state(self, state):
        super().set_state(state)
        self.theta = float(state["theta"])
        self.theta_dot = float(state["theta_dot"])


class TabularEnv:
    """One-hot observations over a TabularMDP; integer actions."""

    def __init__(self, mdp: TabularMDP, name: str, episode_len: int = 50):
        self.mdp = mdp
        self.spec = EnvSpec(name, obs_dim=mdp.n_states, action_dim=1,
                            episode_len=episode_len, r_max=mdp.r_max,
                            discrete_actions=mdp.n_actions)
        self.state = 0
        self.t = 0
        self.clip_warnings = 0
        self._rng = np.random.default_rng(0)
        self._cum_rows = np.cumsum(mdp.transitions, axis=-1)
        self._cum_rho0 = np.cumsum(mdp.rho0)

    def reset(self, seed: int = 0) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self.state = min(int(np.searchsorted(self._cum_rho0, self._rng.random(),
                                             side="right")),
                         self.mdp.n_states - 1)
        self.t = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        one_hot = np.zeros(self.mdp.n_states)
        one_hot[self.state] = 1.0
        return one_hot

    def step(self, action):
        a = int(np.asarray(action).reshape(()))
        if not 0 <= a < self.mdp.n_actions:
            raise DomainError(
                f"action {a} outside [0, {self.mdp.n_actions}) for "
                f"{self.spec.name}"
            )
        reward = float(self.mdp.rewards[self.state, a])
        self.state = min(int(np.searchsorted(self._cum_rows[self.state, a],
                                             self._rng.random(), side="right")),
                         self.mdp.n_states - 1)
        self.t += 1
        done = bool(self.mdp.terminal[self.state]) or self.t >= self.spec.episode_len
        return self._obs(), reward, done

    def is_terminal(self) -> bool:
        return bool(self.mdp.terminal[self.state])

    def get_state(self) -> dict:
        return {
            "state": np.int64(self.state),
            "t": np.int64(self.t),
            "clip_warnings": np.int64(self.clip_warnings),
            "rng": np.frombuffer(
                json.dumps(self._rng.bit_generator.state).encode(),
                dtype=np.uint8).copy(),
        }

    def set_state(self, state: dict) -> None:
        self.state = int(state["state"])
        self.t = int(state["t"])
        self.clip_warnings = int(state["clip_warnings"])
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = json.loads(
            np.asarray(state["rng"], dtype=np.uint8).tobytes().decode())


def make_env(name: str, dim: int | None = None, seed: int = 0, **kwargs):
    """Build an environment by name. `dim` applies to point-mass-chain only."""
    if name == "point-mass-chain":
        return PointMassChain(dim if dim is not None else 8)
    if name == "pendulum":
        return Pendulum()
    if name == "double-integrator":
        return DoubleIntegrator()
    if name == "graph-world":
        mdp = build_graph_world(**kwargs)
        return TabularEnv(mdp, "graph-world")
    if name == "tabular-random":
        mdp = sample_random_mdp(seed=seed, **kwargs)
        return TabularEnv(mdp, "tabular-random")
    raise ConfigurationError(
        f"unknown environment {name!r}; valid names: {', '.join(ENV_NAMES)}"
    )
