"""Tanh-Gaussian policy and its constrained update.

The policy maximizes a scale-normalized Q objective with an entropy bonus,
plus a log-likelihood term that keeps it close to the planner's behavior
distribution mu recorded at collection time. The constraint weight beta is
gated by a running spread estimate of decoded Q values: while values are
still flat (spread below a threshold) the constraint stays off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bins import decode_logits
from .exceptions import ConfigurationError, ContractError, DomainError
from .nn import MLPSpec, gaussian_log_prob, init_mlp_params, mlp_forward

LOG_TWO = math.log(2.0)
HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    hidden: tuple = (128, 128)
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    alpha: float = 1e-4
    beta: float = 1.0
    s_threshold: float = 2.0
    lam: float = 0.5
    ema_rate: float = 0.01
    log_mu_floor: float = -20.0
    head_scale: float = 1e-2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError(
                f"alpha and beta must be non-negative, got {self.alpha}, {self.beta}"
            )
        if not self.log_std_min < self.log_std_max:
            raise ConfigurationError(
                f"log-std bounds out of order: [{self.log_std_min}, {self.log_std_max}]"
            )
        if not 0.0 < self.lam <= 1.0:
            raise ConfigurationError(f"lam must be in (0, 1], got {self.lam}")
        if not 0.0 < self.ema_rate <= 1.0:
            raise ConfigurationError(f"ema_rate must be in (0, 1], got {self.ema_rate}")


def squashed_log_prob(pre: Tensor, mean: Tensor, std: Tensor) -> Tensor:
    """Log density of a = tanh(pre) where pre ~ N(mean, std), row-summed.

    The change-of-variables term uses log(1 - tanh(x)^2) =
    2*(log 2 - x - softplus(-2x)), which stays finite for large |x|.
    """
    base = gaussian_log_prob(pre, mean, std)
    neg2 = ad.mul(pre, Tensor(np.float64(-2.0)))
    corr = ad.mul(
        ad.sub(Tensor(np.float64(LOG_TWO)), ad.add(pre, ad.softplus(neg2))),
        Tensor(np.float64(2.0)),
    )
    return ad.sub(base, ad.tsum(corr, axis=-1))


class TanhGaussianPolicy:
    """MLP trunk emitting concatenated (mean, raw log-std) per action dim."""

    def __init__(self, cfg: PolicyConfig, latent_dim: int, action_dim: int,
                 rng: np.random.Generator):
        if latent_dim < 1 or action_dim < 1:
            raise ConfigurationError(
                f"bad dims: latent_dim={latent_dim} action_dim={action_dim}"
            )
        self.cfg = cfg
        self.action_dim = action_dim
        self.spec = MLPSpec((latent_dim, *cfg.hidden, 2 * action_dim))
        self.params = init_mlp_params(self.spec, rng, "pi",
                                      final_scale=cfg.head_scale)

    def dist(self, z: Tensor) -> tuple[Tensor, Tensor]:
        out = mlp_forward(self.spec, self.params, "pi", z)
        mean = ad.narrow(out, 0, self.action_dim)
        raw = ad.narrow(out, self.action_dim, self.action_dim)
        lo, hi = self.cfg.log_std_min, self.cfg.log_std_max
        log_std = ad.add(
            Tensor(np.float64(lo)),
            ad.mul(ad.add(ad.tanh(raw), Tensor(np.float64(1.0))),
                   Tensor(np.float64(0.5 * (hi - lo)))),
        )
        return mean, log_std

    def sample(self, z: Tensor, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        mean, log_std = self.dist(z)
        std = ad.exp(log_std)
        noise = Tensor(rng.standard_normal(mean.data.shape))
        pre = ad.add(mean, ad.mul(std, noise))
        action = ad.tanh(pre)
        log_pi = squashed_log_prob(pre, mean, std)
        return action, log_pi

    def mean_action_np(self, z: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            mean, _ = self.dist(Tensor(z))
        return np.tanh(mean.data)

    def sample_np(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        with ad.no_grad():
            action, _ = self.sample(Tensor(z), rng)
        return action.data


@dataclass
class ScaleTracker:
    """EMA of the 5th/95th percentiles of decoded Q batches."""

    rate: float = 0.01
    low: float = 0.0
    high: float = 0.0
    initialized: bool = False

    def update(self, values: np.ndarray) -> None:
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size == 0:
            raise ContractError("tracker update needs a non-empty batch")
        p_low, p_high = np.percentile(flat, [5.0, 95.0])
        if not self.initialized:
            self.low, self.high = float(p_low), float(p_high)
            self.initialized = True
        else:
            self.low += self.rate * (float(p_low) - self.low)
            self.high += self.rate * (float(p_high) - self.high)

    @property
    def spread(self) -> float:
        return max(self.high - self.low, 0.0)

    def state(self) -> np.ndarray:
        return np.array([self.rate, self.low, self.high, float(self.initialized)])

    @classmethod
    def from_state(cls, arr: np.ndarray) -> "ScaleTracker":
        return cls(rate=float(arr[0]), low=float(arr[1]), high=float(arr[2]),
                   initialized=bool(arr[3]))


def effective_beta(tracker: ScaleTracker, cfg: PolicyConfig) -> float:
    return 0.0 if tracker.spread < cfg.s_threshold else cfg.beta


def clamped_log_mu(action: Tensor, mu_mean: np.ndarray, mu_std: np.ndarray,
                   floor: float) -> Tensor:
    """Row-summed log density of the stored behavior Gaussian at `action`,
    with each per-dimension term floored to bound gradients far from mu."""
    mu_mean = np.asarray(mu_mean, dtype=np.float64)
    mu_std = np.asarray(mu_std, dtype=np.float64)
    if mu_mean.shape != action.data.shape or mu_std.shape != action.data.shape:
        raise ContractError(
            f"stored behavior params shaped {mu_mean.shape}/{mu_std.shape} do not "
            f"match actions {action.data.shape}"
        )
    if not (np.all(np.isfinite(mu_mean)) and np.all(np.isfinite(mu_std))):
        raise ContractError("stored behavior params contain non-finite entries")
    if np.any(mu_std <= 0):
        raise DomainError("stored behavior std must be strictly positive")
    z = ad.div(ad.sub(action, Tensor(mu_mean)), Tensor(mu_std))
    per_dim = ad.sub(
        ad.mul(ad.mul(z, z), Tensor(np.float64(-0.5))),
        Tensor(np.log(mu_std) + HALF_LOG_TWO_PI),
    )
    return ad.tsum(ad.clip_lower(per_dim, floor), axis=-1)


@dataclass
class PolicyLossReport:
    total: Tensor
    q_mean: float
    entropy: float
    log_mu: float
    beta_eff: float
    scale: float


def _mean_ensemble_q(model, z: Tensor, action: Tensor) -> Tensor:
    vals = [
        decode_logits(model.cfg.bins, model.q_logits_detached(i, z, action))
        for i in range(model.cfg.ensemble_size)
    ]
    stacked = ad.concat([ad.reshape(v, (v.data.shape[0], 1)) for v in vals])
    return ad.tmean(stacked, axis=-1)


def policy_loss(policy: TanhGaussianPolicy, model, latents, mu_mean: np.ndarray,
                mu_std: np.ndarray, cfg: PolicyConfig, tracker: ScaleTracker,
                rng: np.random.Generator,
                beta_eff: float | None = None) -> PolicyLossReport:
    """Horizon-weighted constrained update over a segment of latents.

    latents: sequence of (B, latent_dim) arrays, treated as constants.
    mu_mean/mu_std: (len(latents), B, action_dim) stored planner params.
    """
    steps = len(latents)
    if mu_mean.shape[0] != steps or mu_std.shape[0] != steps:
        raise ContractError(
            f"{steps} latent steps but behavior params cover "
            f"{mu_mean.shape[0]}/{mu_std.shape[0]}"
        )
    if beta_eff is None:
        beta_eff = effective_beta(tracker, cfg)
    scale = max(1.0, tracker.spread)

    # All steps evaluated in one stacked pass; lam^t becomes a row weight.
    # Row order is step-major, matching the chunked rng stream exactly.
    stacked = [np.asarray(z) for z in latents]
    n = stacked[0].shape[0]
    z_all = Tensor(np.concatenate(stacked, axis=0))
    m_mean = mu_mean.reshape(steps * n, -1)
    m_std = mu_std.reshape(steps * n, -1)

    action, log_pi = policy.sample(z_all, rng)
    q_bar = _mean_ensemble_q(model, z_all, action)
    log_mu = clamped_log_mu(action, m_mean, m_std, cfg.log_mu_floor)
    term = ad.add(
        ad.neg(ad.div(q_bar, Tensor(np.float64(scale)))),
        ad.sub(ad.mul(log_pi, Tensor(np.float64(cfg.alpha))),
               ad.mul(log_mu, Tensor(np.float64(beta_eff)))),
    )
    row_w = np.repeat(cfg.lam ** np.arange(steps, dtype=np.float64), n)
    total = ad.div(ad.tsum(ad.mul(term, Tensor(row_w))),
                   Tensor(np.float64(n)))
    return PolicyLossReport(
        total=total,
        q_mean=float(np.mean(q_bar.data)),
        entropy=float(-np.mean(log_pi.data)),
        log_mu=float(np.mean(log_mu.data)),
        beta_eff=float(beta_eff),
        scale=float(scale),
    )


def bc_policy_loss(policy: TanhGaussianPolicy, z: np.ndarray,
                   mu_mean: np.ndarray, mu_std: np.ndarray,
                   cfg: PolicyConfig, tracker: ScaleTracker,
                   rng: np.random.Generator) -> PolicyLossReport:
    """Pure distribution matching: maximize log mu at the policy's samples."""
    zt = Tensor(np.asarray(z))
    action, log_pi = policy.sample(zt, rng)
    log_mu = clamped_log_mu(action, mu_mean, mu_std, cfg.log_mu_floor)
    scale = max(1.0, tracker.spread)
    total = ad.neg(ad.div(ad.tmean(log_mu), Tensor(np.float64(scale))))
    return PolicyLossReport(
        total=total,
        q_mean=0.0,
        entropy=float(-np.mean(log_pi.data)),
        log_mu=float(np.mean(log_mu.data)),
        beta_eff=0.0,
        scale=float(scale),
    )
