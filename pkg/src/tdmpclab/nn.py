"""MLP building blocks, Adam, gradient clipping, Gaussian log densities.

Parameters are flat dicts mapping name -> Tensor so optimizers, checkpoints,
and the clipper can walk them in a deterministic (sorted) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigurationError, ContractError, DomainError, NumericsError

LN_EPS = 1e-5


@dataclass(frozen=True)
class MLPSpec:
    """widths = (in, hidden..., out); LayerNorm then Mish after each hidden linear."""

    widths: tuple[int, ...]
    layer_norm: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigurationError(f"MLP needs at least 2 widths, got {self.widths}")
        if any(w <= 0 for w in self.widths):
            raise ConfigurationError(f"MLP widths must be positive, got {self.widths}")


def init_mlp_params(
    spec: MLPSpec,
    rng: np.random.Generator,
    prefix: str,
    final_scale: float = 1.0,
) -> dict[str, Tensor]:
    """Fan-in scaled uniform weights, zero biases; LayerNorm gain 1 bias 0."""
    params: dict[str, Tensor] = {}
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if i == n_layers - 1 and final_scale != 1.0:
            w = w * final_scale
        params[f"{prefix}.w{i}"] = Tensor(w, requires_grad=True, name=f"{prefix}.w{i}")
        params[f"{prefix}.b{i}"] = Tensor(
            np.zeros(fan_out), requires_grad=True, name=f"{prefix}.b{i}"
        )
        if spec.layer_norm and i < n_layers - 1:
            params[f"{prefix}.ln{i}.g"] = Tensor(
                np.ones(fan_out), requires_grad=True, name=f"{prefix}.ln{i}.g"
            )
            params[f"{prefix}.ln{i}.b"] = Tensor(
                np.zeros(fan_out), requires_grad=True, name=f"{prefix}.ln{i}.b"
            )
    return params


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return ad.layer_norm(x, gain, bias, LN_EPS)


def mlp_forward(
    spec: MLPSpec,
    params: dict[str, Tensor],
    prefix: str,
    x: Tensor,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if x.shape[-1] != spec.widths[0]:
        raise ConfigurationError(
            f"input width {x.shape[-1]} does not match spec width {spec.widths[0]}"
        )
    n_layers = len(spec.widths) - 1
    h = x
    for i in range(n_layers):
        h = ad.affine(h, params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            if spec.layer_norm:
                h = layer_norm(h, params[f"{prefix}.ln{i}.g"], params[f"{prefix}.ln{i}.b"])
            h = ad.mish(h)
            if spec.dropout > 0.0 and train:
                if rng is None:
                    raise ContractError("dropout in train mode needs an rng")
                h = ad.dropout(h, spec.dropout, rng)
    return h


def gaussian_log_prob(x: Tensor, mean: Tensor, std: Tensor) -> Tensor:
    """Row-wise diagonal Gaussian log density, summed over the last axis."""
    if np.any(std.data <= 0.0):
        raise DomainError("gaussian_log_prob needs strictly positive std")
    z = ad.div(ad.sub(x, mean), std)
    per_dim = ad.sub(
        ad.mul(ad.mul(z, z), Tensor(-0.5)),
        ad.add(ad.log(std), Tensor(0.5 * np.log(2.0 * np.pi))),
    )
    return ad.tsum(per_dim, axis=-1)


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for name in sorted(params):
        g = params[name].grad
        if g is None:
            continue
        flat = g.ravel()
        total += float(np.dot(flat, flat))
    if not np.isfinite(total):
        # slow path only to name the culprit
        for name in sorted(params):
            g = params[name].grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient in parameter '{name}'")
        raise NumericsError("non-finite global gradient norm")
    return float(np.sqrt(total))


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scales grads in place so the global L2 norm is <= max_norm; returns pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class Adam:
    """Adam over a named parameter dict; state keyed by parameter name."""

    params: dict[str, Tensor]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name in sorted(self.params):
            self.m[name] = np.zeros_like(self.params[name].data)
            self.v[name] = np.zeros_like(self.params[name].data)

    def step(self) -> None:
        for name in sorted(self.params):
            if self.params[name].grad is None:
                raise ContractError(f"Adam.step: parameter '{name}' has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in sorted(self.params):
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for name in sorted(self.params):
            self.m[name] = np.array(arrays[f"m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"v.{name}"], dtype=np.float64)
