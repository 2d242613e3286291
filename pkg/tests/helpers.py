"""Shared test oracles: central finite differences and error metrics."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tdmpclab.autodiff import Tensor


def fd_gradients(
    f: Callable[[], float], tensors: Sequence[Tensor], h: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient of f w.r.t. each tensor's data, in place."""
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gt = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gt[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
