"""Ring replay buffer with episode-consistent segment sampling.

Records live in preallocated arrays addressed by logical insertion index
modulo capacity. Segment sampling draws length-(H+1) windows of consecutive
records uniformly over valid start positions, where valid means the whole
window sits inside one episode and none of it has been evicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, ContractError

MAX_SAMPLE_CHUNKS = 200


@dataclass
class TransitionRecord:
    obs: np.ndarray
    action: np.ndarray
    mu_mean: np.ndarray
    mu_std: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    episode_id: int
    step_idx: int


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int,
                 r_max: float = 1.0, mu_std_bounds: tuple = (0.05, 2.0)):
        if capacity < 1:
            raise ConfigurationError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.r_max = r_max
        self.mu_std_bounds = mu_std_bounds
        self.count = 0
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, action_dim))
        self.mu_mean = np.zeros((capacity, action_dim))
        self.mu_std = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.episode_id = np.full(capacity, -1, dtype=np.int64)
        self.step_idx = np.zeros(capacity, dtype=np.int64)

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    @property
    def oldest_live_index(self) -> int:
        return max(0, self.count - self.capacity)

    def add(self, rec: TransitionRecord) -> None:
        lo, hi = self.mu_std_bounds
        std = np.asarray(rec.mu_std, dtype=np.float64)
        if np.any(std < lo - 1e-12) or np.any(std > hi + 1e-12):
            raise ContractError(
                f"behavior std outside [{lo}, {hi}]: {std}"
            )
        if not 0.0 <= rec.reward <= self.r_max + 1e-12:
            raise ContractError(
                f"reward {rec.reward} outside [0, {self.r_max}]"
            )
        slot = self.count % self.capacity
        self.obs[slot] = rec.obs
        self.action[slot] = rec.action
        self.mu_mean[slot] = rec.mu_mean
        self.mu_std[slot] = std
        self.reward[slot] = rec.reward
        self.next_obs[slot] = rec.next_obs
        self.done[slot] = float(rec.done)
        self.episode_id[slot] = rec.episode_id
        self.step_idx[slot] = rec.step_idx
        self.count += 1

    def _gather(self, logical: np.ndarray) -> dict:
        slots = logical % self.capacity
        return {
            "obs": self.obs[slots],
            "action": self.action[slots],
            "mu_mean": self.mu_mean[slots],
            "mu_std": self.mu_std[slots],
            "reward": self.reward[slots],
            "next_obs": self.next_obs[slots],
            "done": self.done[slots],
        }

    def sample_segments(self, rng: np.random.Generator, batch_size: int,
                        horizon: int) -> dict:
        """Return field arrays shaped (horizon+1, batch, ...)."""
        if batch_size < 1 or horizon < 0:
            raise ConfigurationError(
                f"bad sample request: batch={batch_size} horizon={horizon}"
            )
        window = horizon + 1
        lo = self.oldest_live_index
        hi = self.count - window
        if hi < lo:
            raise ContractError(
                f"buffer holds {len(self)} records, cannot cut a "
                f"{window}-record segment"
            )
        starts = np.empty(0, dtype=np.int64)
        for _ in range(MAX_SAMPLE_CHUNKS):
            draw = rng.integers(lo, hi + 1, size=4 * batch_size)
            ok = (self.episode_id[draw % self.capacity]
                  == self.episode_id[(draw + horizon) % self.capacity])
            starts = np.concatenate([starts, draw[ok]])
            if starts.size >= batch_size:
                starts = starts[:batch_size]
                break
        else:
            raise ContractError(
                f"no episode-consistent window of {window} records found in "
                f"{MAX_SAMPLE_CHUNKS} sampling rounds"
            )
        fields = [self._gather(starts + t) for t in range(window)]
        return {
            key: np.stack([f[key] for f in fields])
            for key in fields[0]
        }

    # -- checkpoint support --

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "obs": self.obs, "action": self.action, "mu_mean": self.mu_mean,
            "mu_std": self.mu_std, "reward": self.reward,
            "next_obs": self.next_obs, "done": self.done,
            "episode_id": self.episode_id, "step_idx": self.step_idx,
            "count": np.int64(self.count),
        }

    def load_state_arrays(self, arrays: dict) -> None:
        for name in ("obs", "action", "mu_mean", "mu_std", "reward",
                     "next_obs", "done", "episode_id", "step_idx"):
            current = getattr(self, name)
            loaded = np.asarray(arrays[name])
            if loaded.shape != current.shape:
                raise ContractError(
                    f"buffer field {name!r}: checkpoint shape {loaded.shape} "
                    f"vs {current.shape}"
                )
            current[...] = loaded
        self.count = int(arrays["count"])
