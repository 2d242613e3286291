"""Latent world model: encoder, dynamics, reward head, and a Q ensemble.

All heads are MLPs over a shared latent space. Reward and Q heads predict
distributions over discrete value bins and are trained with cross-entropy
against two-hot targets. The Q ensemble keeps slowly-moving target copies
used for TD bootstrapping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bins import (
    BinSpec,
    cross_entropy,
    cross_entropy_rows_np,
    decode_logits,
    decode_logits_np,
    two_hot_encode,
)
from .exceptions import ConfigurationError, ContractError
from .nn import MLPSpec, init_mlp_params, mlp_forward

CHECKPOINT_VERSION = "tdmpclab.model.v1"


@dataclass(frozen=True)
class WorldModelConfig:
    obs_dim: int
    action_dim: int
    latent_dim: int = 64
    encoder_hidden: tuple = (256, 256)
    head_hidden: tuple = (128, 128)
    ensemble_size: int = 5
    q_dropout: float = 0.01
    bins: BinSpec = field(default_factory=BinSpec)
    consistency_coef: float = 20.0
    reward_coef: float = 0.1
    value_coef: float = 0.1

    def __post_init__(self):
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ConfigurationError(
                f"bad dims: obs_dim={self.obs_dim} action_dim={self.action_dim}"
            )
        if self.ensemble_size < 2:
            raise ConfigurationError(
                f"Q ensemble needs >= 2 members for min-subsampling, "
                f"got {self.ensemble_size}"
            )


class WorldModel:
    """Parameter container plus forward passes. Optimization lives elsewhere."""

    def __init__(self, cfg: WorldModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        d_in = cfg.obs_dim
        d_z = cfg.latent_dim
        d_a = cfg.action_dim
        n_bins = cfg.bins.n_bins
        self.enc_spec = MLPSpec((d_in, *cfg.encoder_hidden, d_z))
        self.dyn_spec = MLPSpec((d_z + d_a, *cfg.head_hidden, d_z))
        self.rew_spec = MLPSpec((d_z + d_a, *cfg.head_hidden, n_bins))
        self.q_spec = MLPSpec(
            (d_z + d_a, *cfg.head_hidden, n_bins), dropout=cfg.q_dropout
        )
        self.params: dict[str, Tensor] = {}
        self.params.update(init_mlp_params(self.enc_spec, rng, "enc"))
        self.params.update(init_mlp_params(self.dyn_spec, rng, "dyn"))
        self.params.update(init_mlp_params(self.rew_spec, rng, "rew"))
        for i in range(cfg.ensemble_size):
            self.params.update(init_mlp_params(self.q_spec, rng, f"q{i}"))
        self.target_q: dict[str, np.ndarray] = {
            name: t.data.copy()
            for name, t in self.params.items()
            if name.startswith("q")
        }

    # -- forward passes (Tensor in, Tensor out) --

    def encode(self, obs: Tensor) -> Tensor:
        return mlp_forward(self.enc_spec, self.params, "enc", obs)

    def next_latent(self, z: Tensor, action: Tensor) -> Tensor:
        za = ad.concat([z, action], axis=-1)
        return mlp_forward(self.dyn_spec, self.params, "dyn", za)

    def reward_logits(self, z: Tensor, action: Tensor) -> Tensor:
        za = ad.concat([z, action], axis=-1)
        return mlp_forward(self.rew_spec, self.params, "rew", za)

    def q_logits(self, member: int, z: Tensor, action: Tensor,
                 train: bool = False, rng=None) -> Tensor:
        za = ad.concat([z, action], axis=-1)
        return mlp_forward(self.q_spec, self.params, f"q{member}", za,
                           train=train, rng=rng)

    def target_q_logits(self, member: int, z: Tensor, action: Tensor) -> Tensor:
        consts = {name: Tensor(arr) for name, arr in self.target_q.items()
                  if name.startswith(f"q{member}.")}
        za = ad.concat([z, action], axis=-1)
        return mlp_forward(self.q_spec, consts, f"q{member}", za)

    def q_logits_detached(self, member: int, z: Tensor, action: Tensor) -> Tensor:
        """Online Q forward with weights as constants: gradient reaches only
        the action path. Used by the policy objective."""
        consts = {name: Tensor(t.data) for name, t in self.params.items()
                  if name.startswith(f"q{member}.")}
        za = ad.concat([z, action], axis=-1)
        return mlp_forward(self.q_spec, consts, f"q{member}", za)

    # -- no-grad numpy conveniences for the planner and evaluation --

    def encode_np(self, obs: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.encode(Tensor(obs)).data

    def next_latent_np(self, z: np.ndarray, action: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.next_latent(Tensor(z), Tensor(action)).data

    def reward_np(self, z: np.ndarray, action: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = self.reward_logits(Tensor(z), Tensor(action))
        return decode_logits_np(self.cfg.bins, logits.data)

    def q_value_np(self, member: int, z: np.ndarray, action: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = self.q_logits(member, Tensor(z), Tensor(action))
        return decode_logits_np(self.cfg.bins, logits.data)

    def mean_q_np(self, z: np.ndarray, action: np.ndarray) -> np.ndarray:
        vals = [self.q_value_np(i, z, action) for i in range(self.cfg.ensemble_size)]
        return np.mean(vals, axis=0)

    def min2_q_np(self, members: tuple, z: np.ndarray, action: np.ndarray) -> np.ndarray:
        i, j = members
        return np.minimum(self.q_value_np(i, z, action),
                          self.q_value_np(j, z, action))

    # -- training targets --

    def td_target(self, policy, reward: np.ndarray, next_obs: np.ndarray,
                  done: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
        """Scalar TD targets r + gamma * min-of-2 target-ensemble Q(z', a'), a' ~ pi.

        A single member pair is drawn per call. Terminal transitions bootstrap
        nothing: their target is the reward alone.
        """
        members = tuple(rng.choice(self.cfg.ensemble_size, size=2, replace=False))
        with ad.no_grad():
            z_next = self.encode(Tensor(next_obs))
            a_next, _ = policy.sample(z_next, rng)
            qs = []
            for m in members:
                logits = self.target_q_logits(m, z_next, a_next)
                qs.append(decode_logits_np(self.cfg.bins, logits.data))
        q_min = np.minimum(qs[0], qs[1])
        return reward + gamma * (1.0 - done) * q_min

    def polyak_update(self, rho: float) -> None:
        """target <- rho * target + (1 - rho) * online, for Q parameters."""
        for name, arr in self.target_q.items():
            arr *= rho
            arr += (1.0 - rho) * self.params[name].data


@dataclass
class ModelLossReport:
    total: Tensor
    consistency: float
    reward_ce: float
    value_ce: float
    td_targets: np.ndarray
    latents: list


def model_loss(model: WorldModel, policy, batch: dict, gamma: float,
               rng: np.random.Generator) -> ModelLossReport:
    """Joint latent-consistency + reward-CE + value-CE loss over a segment batch.

    batch arrays are shaped (H+1, B, .). The latent trajectory is rolled out
    open-loop from the first observation; consistency targets re-encode the
    observed next states without gradient. Step t is discounted by gamma^t.
    """
    horizon = batch["obs"].shape[0] - 1
    n = batch["obs"].shape[1]
    cfg = model.cfg
    flat = lambda a: a.reshape((horizon + 1) * n, *a.shape[2:])
    targets = model.td_target(
        policy, flat(batch["reward"]), flat(batch["next_obs"]),
        flat(batch["done"]), gamma, rng,
    ).reshape(horizon + 1, n)

    with ad.no_grad():
        z_tgt = model.encode(Tensor(flat(batch["next_obs"]))).data

    z = model.encode(Tensor(batch["obs"][0]))
    latents = [z.data.copy()]
    zs = [z]
    for t in range(horizon + 1):
        z = model.next_latent(z, Tensor(batch["action"][t]))
        zs.append(z)
        latents.append(z.data.copy())

    # Heads run once over all steps stacked step-major; gamma^t rides along
    # as a per-row weight so the sum/n aggregation matches a per-step loop.
    w_rows = np.repeat(gamma ** np.arange(horizon + 1, dtype=np.float64), n)
    z_in = ad.concat(zs[:-1], axis=0)
    z_pred = ad.concat(zs[1:], axis=0)
    a_all = Tensor(flat(batch["action"]))

    diff = ad.sub(z_pred, Tensor(z_tgt))
    sq_rows = ad.tsum(ad.mul(diff, diff), axis=-1)
    cons = ad.div(ad.tsum(ad.mul(sq_rows, Tensor(w_rows))),
                  Tensor(np.float64(n)))

    rew_probs = two_hot_encode(cfg.bins, flat(batch["reward"]))
    rew_logits = model.reward_logits(z_in, a_all)
    rew_ce = cross_entropy(rew_logits, rew_probs, row_weights=w_rows, norm=n)

    q_probs = two_hot_encode(cfg.bins, targets.reshape(-1))
    member_ces, member_row_ces = [], []
    for i in range(cfg.ensemble_size):
        logits = model.q_logits(i, z_in, a_all, train=True, rng=rng)
        member_ces.append(
            cross_entropy(logits, q_probs, row_weights=w_rows, norm=n)
        )
        member_row_ces.append(cross_entropy_rows_np(logits.data, q_probs))
    val_ce = ad.tmean(ad.concat([ad.reshape(c, (1,)) for c in member_ces]))

    total = ad.add(
        ad.mul(cons, Tensor(np.float64(cfg.consistency_coef))),
        ad.add(
            ad.mul(rew_ce, Tensor(np.float64(cfg.reward_coef))),
            ad.mul(val_ce, Tensor(np.float64(cfg.value_coef))),
        ),
    )
    return ModelLossReport(
        total=total,
        consistency=float(np.mean(sq_rows.data)),
        reward_ce=float(np.mean(cross_entropy_rows_np(rew_logits.data, rew_probs))),
        value_ce=float(np.mean(member_row_ces)),
        td_targets=targets.reshape(-1),
        latents=latents,
    )


# -- checkpointing --

def model_state(model: WorldModel) -> dict[str, np.ndarray]:
    state = {f"online.{k}": v.data for k, v in model.params.items()}
    state.update({f"target.{k}": v for k, v in model.target_q.items()})
    return state


def save_model(model: WorldModel, path: str) -> None:
    state = model_state(model)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in sorted(state.items())},
    }
    arrays = dict(state)
    arrays["__manifest__"] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(model: WorldModel, path: str) -> None:
    with np.load(path) as data:
        manifest = json.loads(data["__manifest__"].tobytes().decode())
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ContractError(
                f"checkpoint version {manifest.get('version')!r}, "
                f"expected {CHECKPOINT_VERSION!r}"
            )
        state = model_state(model)
        for key, arr in state.items():
            if key not in data:
                raise ContractError(f"checkpoint missing array {key!r}")
            loaded = data[key]
            if loaded.shape != arr.shape:
                raise ContractError(
                    f"shape mismatch for {key!r}: checkpoint {loaded.shape}, "
                    f"model {arr.shape}"
                )
            arr[...] = loaded
