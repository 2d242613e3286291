"""Single-file run checkpoints.

One ``.npz`` holds a JSON manifest plus every array the loop needs to resume
bitwise: network and target parameters, both optimizer moments, the scale
tracker and gate, the replay buffer, environment state, generator states, and
loop counters. Loading validates shapes against the live agent and refuses
checkpoints written for a different layout.
"""

from __future__ import annotations

import json

import numpy as np

from .exceptions import ContractError
from .harness import TRAIN_KEYS, Agent
from .planner import PlanDistribution
from .policy import ScaleTracker
from .worldmodel import CHECKPOINT_VERSION

RUN_CHECKPOINT_VERSION = "tdmpclab.run.v1"


def _pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj).encode(), dtype=np.uint8).copy()


def _unpack_json(arr: np.ndarray):
    return json.loads(np.asarray(arr, dtype=np.uint8).tobytes().decode())


def _rng_state(rng: np.random.Generator) -> np.ndarray:
    return _pack_json(rng.bit_generator.state)


def _restore_rng(arr: np.ndarray) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = _unpack_json(arr)
    return rng


def checkpoint_arrays(agent: Agent, env) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in agent.model.params.items():
        arrays[f"model.online.{name}"] = tensor.data
    for name, value in agent.model.target_q.items():
        arrays[f"model.target.{name}"] = value
    for name, tensor in agent.policy.params.items():
        arrays[f"policy.{name}"] = tensor.data
    for key, value in agent.model_opt.state_arrays().items():
        arrays[f"opt.model.{key}"] = value
    for key, value in agent.policy_opt.state_arrays().items():
        arrays[f"opt.policy.{key}"] = value
    for key, value in agent.buffer.state_arrays().items():
        arrays[f"buffer.{key}"] = value
    for key, value in env.get_state().items():
        arrays[f"env.{key}"] = np.asarray(value)
    arrays["tracker"] = agent.tracker.state()
    arrays["gate"] = np.array([float(agent.gate.latched),
                               float(agent.gate.pending)])
    arrays["rng.collect"] = _rng_state(agent.rng_collect)
    arrays["rng.train"] = _rng_state(agent.rng_train)
    loop = agent.loop
    arrays["loop"] = np.array([
        float(loop.env_step), float(loop.episode_id),
        loop.episode_return, loop.last_episode_return,
        loop.update_debt, float(loop.pretrained),
    ])
    arrays["last_train"] = np.array(
        [loop.last_train.get(k, np.nan) for k in TRAIN_KEYS]
        if loop.last_train else [])
    if agent.obs is not None:
        arrays["obs"] = np.asarray(agent.obs, dtype=np.float64)
    if agent.warm is not None:
        arrays["warm.mean"] = agent.warm.mean
        arrays["warm.std"] = agent.warm.std
    arrays["opt.steps"] = np.array([agent.model_opt.t, agent.policy_opt.t],
                                   dtype=np.int64)
    return arrays


def save_checkpoint(path: str, agent: Agent, env) -> None:
    from .config import config_to_text

    arrays = checkpoint_arrays(agent, env)
    arrays["config"] = np.frombuffer(
        config_to_text(agent.cfg).encode(), dtype=np.uint8).copy()
    manifest = {
        "version": RUN_CHECKPOINT_VERSION,
        "model_version": CHECKPOINT_VERSION,
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "env": env.spec.name,
        "variant": agent.cfg.run.variant,
        "seed": agent.cfg.run.seed,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
    }
    arrays["manifest"] = _pack_json(manifest)
    np.savez(path, **arrays)


def load_run(path: str) -> tuple[Agent, object]:
    """Rebuild an agent and its environment from the config embedded in a
    checkpoint, then restore full state."""
    from .config import parse_config
    from .harness import build_env

    with np.load(path) as data:
        if "config" not in data.files:
            raise ContractError(f"{path} carries no embedded config")
        text = data["config"].tobytes().decode()
    cfg = parse_config(text)
    env = build_env(cfg)
    agent = Agent(cfg, env.spec.obs_dim, env.spec.action_dim)
    load_checkpoint(path, agent, env)
    return agent, env


def load_checkpoint(path: str, agent: Agent, env) -> None:
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    arrays.pop("config", None)
    if "manifest" not in arrays:
        raise ContractError(f"{path} is missing its manifest")
    manifest = _unpack_json(arrays.pop("manifest"))
    if manifest.get("version") != RUN_CHECKPOINT_VERSION:
        raise ContractError(
            f"checkpoint version {manifest.get('version')!r} != "
            f"{RUN_CHECKPOINT_VERSION!r}")
    for field, expected in (("obs_dim", agent.obs_dim),
                            ("action_dim", agent.action_dim),
                            ("env", env.spec.name)):
        if manifest.get(field) != expected:
            raise ContractError(
                f"checkpoint {field}={manifest.get(field)!r} does not match "
                f"the live run ({expected!r})")

    for name, tensor in agent.model.params.items():
        loaded = arrays[f"model.online.{name}"]
        if loaded.shape != tensor.data.shape:
            raise ContractError(
                f"model param {name}: checkpoint shape {loaded.shape} vs "
                f"{tensor.data.shape}")
        tensor.data = np.array(loaded, dtype=np.float64)
    for name in agent.model.target_q:
        agent.model.target_q[name] = np.array(arrays[f"model.target.{name}"],
                                              dtype=np.float64)
    for name, tensor in agent.policy.params.items():
        loaded = arrays[f"policy.{name}"]
        if loaded.shape != tensor.data.shape:
            raise ContractError(
                f"policy param {name}: checkpoint shape {loaded.shape} vs "
                f"{tensor.data.shape}")
        tensor.data = np.array(loaded, dtype=np.float64)

    opt_steps = arrays["opt.steps"]
    agent.model_opt.load_state_arrays(
        {k[len("opt.model."):]: v for k, v in arrays.items()
         if k.startswith("opt.model.")}, int(opt_steps[0]))
    agent.policy_opt.load_state_arrays(
        {k[len("opt.policy."):]: v for k, v in arrays.items()
         if k.startswith("opt.policy.")}, int(opt_steps[1]))
    agent.buffer.load_state_arrays(
        {k[len("buffer."):]: v for k, v in arrays.items()
         if k.startswith("buffer.")})
    env.set_state({k[len("env."):]: v for k, v in arrays.items()
                   if k.startswith("env.")})

    agent.tracker = ScaleTracker.from_state(arrays["tracker"])
    agent.tracker.rate = agent.policy_cfg.ema_rate
    gate = arrays["gate"]
    agent.gate.latched = bool(gate[0])
    agent.gate.pending = int(gate[1])
    agent.rng_collect = _restore_rng(arrays["rng.collect"])
    agent.rng_train = _restore_rng(arrays["rng.train"])

    loop_arr = arrays["loop"]
    loop = agent.loop
    loop.env_step = int(loop_arr[0])
    loop.episode_id = int(loop_arr[1])
    loop.episode_return = float(loop_arr[2])
    loop.last_episode_return = float(loop_arr[3])
    loop.update_debt = float(loop_arr[4])
    loop.pretrained = bool(loop_arr[5])
    last_train = arrays["last_train"]
    loop.last_train = (
        {k: float(v) for k, v in zip(TRAIN_KEYS, last_train)}
        if last_train.size else {})

    agent.obs = np.array(arrays["obs"]) if "obs" in arrays else None
    if "warm.mean" in arrays:
        agent.warm = PlanDistribution(mean=np.array(arrays["warm.mean"]),
                                      std=np.array(arrays["warm.std"]))
    else:
        agent.warm = None
