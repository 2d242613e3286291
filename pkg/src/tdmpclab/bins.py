"""Two-hot discrete regression over a fixed value range.

Values are clamped to [v_min, v_max] in raw space; bin centers are uniformly
spaced in transformed space (symmetric log by default), so resolution
concentrates near zero. Encoding places mass on at most two adjacent bins and
its expectation reproduces the transformed value exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigurationError


def symlog_np(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def symexp_np(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.expm1(np.abs(x))


@dataclass(frozen=True)
class BinSpec:
    n_bins: int = 101
    v_min: float = -10.0
    v_max: float = 10.0
    transform: bool = True

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigurationError(f"need at least 2 bins, got {self.n_bins}")
        if not self.v_min < self.v_max:
            raise ConfigurationError(
                f"empty value range [{self.v_min}, {self.v_max}]"
            )

    def centers_transformed(self) -> np.ndarray:
        lo, hi = (self.v_min, self.v_max)
        if self.transform:
            lo, hi = symlog_np(np.array([lo, hi]))
        return np.linspace(lo, hi, self.n_bins)

    def centers_raw(self) -> np.ndarray:
        c = self.centers_transformed()
        return symexp_np(c) if self.transform else c


def two_hot_encode(spec: BinSpec, values: np.ndarray) -> np.ndarray:
    """(...,) raw values -> (..., n_bins) distributions."""
    v = np.clip(np.asarray(values, dtype=np.float64), spec.v_min, spec.v_max)
    u = symlog_np(v) if spec.transform else v
    c = spec.centers_transformed()
    step = c[1] - c[0]
    pos = (u - c[0]) / step
    idx = np.clip(np.floor(pos).astype(np.int64), 0, spec.n_bins - 2)
    w_hi = np.clip(pos - idx, 0.0, 1.0)
    out = np.zeros(v.shape + (spec.n_bins,))
    flat = out.reshape(-1, spec.n_bins)
    fi = idx.reshape(-1)
    fw = w_hi.reshape(-1)
    rows = np.arange(flat.shape[0])
    flat[rows, fi] = 1.0 - fw
    flat[rows, fi + 1] += fw
    return out


def decode_expectation_np(spec: BinSpec, probs: np.ndarray) -> np.ndarray:
    u = probs @ spec.centers_transformed()
    return symexp_np(u) if spec.transform else u


def decode_logits_np(spec: BinSpec, logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return decode_expectation_np(spec, e / e.sum(axis=-1, keepdims=True))


def decode_logits(spec: BinSpec, logits: Tensor) -> Tensor:
    """Differentiable decode: softmax expectation in transformed space, then inverse."""
    p = ad.softmax(logits, axis=-1)
    u = ad.tsum(ad.mul(p, Tensor(spec.centers_transformed())), axis=-1)
    return ad.symexp(u) if spec.transform else u


def cross_entropy(logits: Tensor, target_probs: np.ndarray,
                  row_weights: np.ndarray | None = None,
                  norm: float | None = None) -> Tensor:
    """Mean over rows of CE(target || softmax(logits)).

    With `row_weights`, rows are scaled individually and the weighted sum is
    divided by `norm` (defaults to the row count), which lets callers fold a
    per-step discount into one stacked batch.
    """
    lp = ad.log_softmax(logits, axis=-1)
    rows = ad.neg(ad.tsum(ad.mul(lp, Tensor(target_probs)), axis=-1))
    if row_weights is None:
        return ad.tmean(rows)
    denom = float(rows.data.shape[0]) if norm is None else float(norm)
    return ad.div(ad.tsum(ad.mul(rows, Tensor(np.asarray(row_weights)))),
                  Tensor(np.float64(denom)))


def cross_entropy_rows_np(logits: np.ndarray, target_probs: np.ndarray) -> np.ndarray:
    """Per-row CE computed outside the tape, for reporting."""
    z = logits - logits.max(axis=-1, keepdims=True)
    lp = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    return -np.sum(lp * target_probs, axis=-1)
