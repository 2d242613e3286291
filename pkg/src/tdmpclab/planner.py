"""Sampling-based MPC over the latent model (MPPI-style).

Each call refines a per-step Gaussian over H-step action sequences: sample,
score with the model (decoded rewards plus a terminal value from the Q
ensemble), keep the top-K elites, and refit mean/std from exponentially
weighted elite statistics. The refit mean and the best sequence found so far
are always re-scored as candidates, which makes the best elite score
non-decreasing across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, NumericsError


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 3
    iterations: int = 6
    samples: int = 512
    elites: int = 64
    policy_rollouts: int = 24
    temperature: float = 0.5
    std_min: float = 0.05
    std_max: float = 2.0
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if self.iterations < 1:
            raise ConfigurationError(
                f"iterations must be >= 1, got {self.iterations}"
            )
        if not 1 <= self.elites <= self.samples:
            raise ConfigurationError(
                f"need 1 <= elites <= samples, got {self.elites}/{self.samples}"
            )
        # Slots for the refit mean and the best-so-far candidate.
        if self.policy_rollouts < 0 or self.policy_rollouts > self.samples - 2:
            raise ConfigurationError(
                f"policy_rollouts must be in [0, samples-2], got "
                f"{self.policy_rollouts}"
            )
        if not 0 < self.std_min < self.std_max:
            raise ConfigurationError(
                f"need 0 < std_min < std_max, got [{self.std_min}, {self.std_max}]"
            )
        if self.temperature <= 0:
            raise ConfigurationError(
                f"temperature must be positive, got {self.temperature}"
            )
        if not self.action_low < self.action_high:
            raise ConfigurationError(
                f"empty action box [{self.action_low}, {self.action_high}]"
            )


@dataclass
class PlanDistribution:
    mean: np.ndarray  # (H, action_dim)
    std: np.ndarray   # (H, action_dim)


@dataclass
class PlanResult:
    action: np.ndarray
    distribution: PlanDistribution
    value: float
    best_scores: list = field(default_factory=list)

    @property
    def behavior_mean(self) -> np.ndarray:
        return self.distribution.mean[0]

    @property
    def behavior_std(self) -> np.ndarray:
        return self.distribution.std[0]


def cold_start(cfg: PlannerConfig, action_dim: int) -> PlanDistribution:
    return PlanDistribution(
        mean=np.zeros((cfg.horizon, action_dim)),
        std=np.full((cfg.horizon, action_dim), cfg.std_max),
    )


def shift_warm_start(prev: PlanDistribution, cfg: PlannerConfig) -> PlanDistribution:
    mean = np.zeros_like(prev.mean)
    mean[:-1] = prev.mean[1:]
    return PlanDistribution(mean=mean, std=np.full_like(prev.std, cfg.std_max))


def score_sequences(model, policy, z0: np.ndarray, actions: np.ndarray,
                    gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Return estimates for a batch of action sequences.

    actions: (N, H, m). The terminal value uses one min-of-2 Q subsample and
    one nominal-policy action draw shared across the batch; rng order is part
    of the determinism contract (member pair first, then the action draw).
    """
    n, horizon, _ = actions.shape
    z = np.broadcast_to(z0, (n, z0.shape[-1])).copy()
    returns = np.zeros(n)
    disc = 1.0
    for h in range(horizon):
        a_h = actions[:, h]
        returns += disc * model.reward_np(z, a_h)
        z = model.next_latent_np(z, a_h)
        disc *= gamma
    members = tuple(rng.choice(model.cfg.ensemble_size, size=2, replace=False))
    a_term = policy.sample_np(z, rng)
    returns += disc * model.min2_q_np(members, z, a_term)
    return returns


def estimate_return(model, policy, z: np.ndarray, actions: np.ndarray,
                    gamma: float, rng: np.random.Generator) -> float:
    return float(score_sequences(model, policy, z, actions[None], gamma, rng)[0])


def _policy_sequence(model, policy, z0: np.ndarray, horizon: int) -> np.ndarray:
    """Noiseless mode rollout of the nominal policy through the dynamics."""
    z = z0[None]
    seq = []
    for _ in range(horizon):
        a = policy.mean_action_np(z)
        seq.append(a[0])
        z = model.next_latent_np(z, a)
    return np.stack(seq)


def plan(model, policy, z: np.ndarray, cfg: PlannerConfig, gamma: float,
         seed: int, warm: PlanDistribution | None = None,
         explore: bool = True) -> PlanResult:
    """One receding-horizon planning step. Deterministic given `seed`.

    Candidate block per iteration: current mean, best-so-far sequence (from
    the second iteration on), fresh Gaussian draws, and `policy_rollouts`
    copies of the nominal-policy mode rollout; `samples` candidates in total.
    """
    rng = np.random.default_rng(seed)
    action_dim = policy.action_dim
    dist = warm if warm is not None else cold_start(cfg, action_dim)
    mean = np.clip(dist.mean.copy(), cfg.action_low, cfg.action_high)
    std = np.clip(dist.std.copy(), cfg.std_min, cfg.std_max)

    pi_seq = None
    if cfg.policy_rollouts > 0:
        pi_seq = np.clip(_policy_sequence(model, policy, z, cfg.horizon),
                         cfg.action_low, cfg.action_high)

    best_seq = None
    best_score = -np.inf
    best_scores = []
    for _ in range(cfg.iterations):
        blocks = [mean[None]]
        if best_seq is not None:
            blocks.append(best_seq[None])
        n_gauss = cfg.samples - cfg.policy_rollouts - len(blocks)
        noise = rng.standard_normal((n_gauss, cfg.horizon, action_dim))
        blocks.append(np.clip(mean + std * noise, cfg.action_low, cfg.action_high))
        if pi_seq is not None:
            blocks.append(np.broadcast_to(
                pi_seq, (cfg.policy_rollouts, cfg.horizon, action_dim)))
        candidates = np.concatenate(blocks, axis=0)

        scores = score_sequences(model, policy, z, candidates, gamma, rng)
        if not np.all(np.isfinite(scores)):
            bad = int(np.flatnonzero(~np.isfinite(scores))[0])
            raise NumericsError(
                f"non-finite plan score at candidate index {bad}"
            )
        order = np.argsort(scores, kind="stable")
        elite_idx = order[-cfg.elites:]
        elite_scores = scores[elite_idx]
        elite_actions = candidates[elite_idx]

        top = int(elite_idx[-1])
        if scores[top] > best_score:
            best_score = float(scores[top])
            best_seq = candidates[top].copy()
        best_scores.append(float(elite_scores.max()))

        weights = np.exp((elite_scores - elite_scores.max()) / cfg.temperature)
        weights /= weights.sum()
        w = weights[:, None, None]
        mean = np.clip((w * elite_actions).sum(axis=0),
                       cfg.action_low, cfg.action_high)
        var = (w * (elite_actions - mean) ** 2).sum(axis=0)
        std = np.clip(np.sqrt(var), cfg.std_min, cfg.std_max)

    value = estimate_return(model, policy, z, mean, gamma, rng)
    if explore:
        action = np.clip(mean[0] + std[0] * rng.standard_normal(action_dim),
                         cfg.action_low, cfg.action_high)
    else:
        action = mean[0].copy()
    return PlanResult(
        action=action,
        distribution=PlanDistribution(mean=mean, std=std),
        value=value,
        best_scores=best_scores,
    )
