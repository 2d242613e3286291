"""End-to-end training loop: collect with the planner, update the model and
the constrained policy, track diagnostics, checkpoint, and evaluate.

The loop runs a seeded pretraining phase (random-action data plus model-only
updates), then interleaves environment steps with training at a configurable
update-to-data ratio. All randomness flows from named generators derived from
the run seed, so runs are bitwise reproducible and resumable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .buffer import ReplayBuffer, TransitionRecord
from .config import RunConfig
from .envs import make_env
from .exceptions import ConfigurationError, ContractError
from .metrics import MetricsRow, MetricsWriter
from .nn import Adam, clip_global_norm
from .planner import PlanDistribution, cold_start, plan, shift_warm_start
from .policy import (
    ScaleTracker,
    TanhGaussianPolicy,
    bc_policy_loss,
    policy_loss,
)
from .worldmodel import WorldModel, model_loss

SEED_SPAN = 2**63 - 1


@dataclass
class BetaGate:
    """Hysteresis latch over the raw threshold rule: the emitted decision
    flips only after the raw decision disagrees twice in a row."""

    threshold: float
    latched: bool = False
    pending: int = 0

    def update(self, s_q: float) -> bool:
        raw = s_q >= self.threshold
        if raw == self.latched:
            self.pending = 0
        else:
            self.pending += 1
            if self.pending >= 2:
                self.latched = raw
                self.pending = 0
        return self.latched


TRAIN_KEYS = ("model_loss", "consistency", "reward_ce", "value_ce",
              "policy_loss", "q_mean", "entropy", "log_mu", "beta_eff", "s_q")


@dataclass
class LoopState:
    env_step: int = 0
    episode_id: int = 0
    episode_return: float = 0.0
    last_episode_return: float = 0.0
    update_debt: float = 0.0
    pretrained: bool = False
    last_train: dict = field(default_factory=dict)


class Agent:
    """Bundles the learned components, their optimizers, and loop state."""

    def __init__(self, cfg: RunConfig, obs_dim: int, action_dim: int):
        cfg.validate()
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.planner_cfg = cfg.planner_config()
        self.policy_cfg = cfg.policy_config()
        self.gamma = cfg.run.gamma

        seeds = np.random.SeedSequence(cfg.run.seed).spawn(4)
        self.model = WorldModel(cfg.model_config(obs_dim, action_dim),
                                np.random.default_rng(seeds[0]))
        self.policy = TanhGaussianPolicy(self.policy_cfg,
                                         self.model.cfg.latent_dim, action_dim,
                                         np.random.default_rng(seeds[1]))
        self.rng_collect = np.random.default_rng(seeds[2])
        self.rng_train = np.random.default_rng(seeds[3])
        self.model_opt = Adam(self.model.params, lr=cfg.model.lr)
        self.policy_opt = Adam(self.policy.params, lr=cfg.policy.lr)
        self.tracker = ScaleTracker(rate=self.policy_cfg.ema_rate)
        self.gate = BetaGate(threshold=self.policy_cfg.s_threshold)
        self.buffer = ReplayBuffer(
            cfg.buffer.capacity, obs_dim, action_dim,
            r_max=1.0,
            mu_std_bounds=(self.planner_cfg.std_min, self.planner_cfg.std_max),
        )
        self.loop = LoopState()
        self.warm: PlanDistribution | None = None
        self.obs: np.ndarray | None = None

    def beta_now(self) -> float:
        return self.policy_cfg.beta if self.gate.latched else 0.0


def collect_step(agent: Agent, env, explore: bool = True) -> tuple[float, bool]:
    """One plan + env step + buffer append. Returns (reward, done)."""
    obs = agent.obs
    z = agent.model.encode_np(obs[None])[0]
    seed = int(agent.rng_collect.integers(SEED_SPAN))
    result = plan(agent.model, agent.policy, z, agent.planner_cfg, agent.gamma,
                  seed, warm=agent.warm, explore=explore)
    next_obs, reward, done = env.step(result.action)
    agent.buffer.add(TransitionRecord(
        obs=obs, action=result.action,
        mu_mean=result.behavior_mean, mu_std=result.behavior_std,
        reward=reward, next_obs=next_obs,
        done=env.is_terminal(),
        episode_id=agent.loop.episode_id,
        step_idx=env.t - 1,
    ))
    agent.obs = next_obs
    agent.warm = None if done else shift_warm_start(result.distribution,
                                                    agent.planner_cfg)
    return reward, done


def random_collect_step(agent: Agent, env) -> tuple[float, bool]:
    """Pretraining data: uniform random actions, wide nominal behavior."""
    obs = agent.obs
    action = agent.rng_collect.uniform(-1.0, 1.0, size=agent.action_dim)
    next_obs, reward, done = env.step(action)
    agent.buffer.add(TransitionRecord(
        obs=obs, action=action,
        mu_mean=np.zeros(agent.action_dim),
        mu_std=np.full(agent.action_dim, agent.planner_cfg.std_max),
        reward=reward, next_obs=next_obs,
        done=env.is_terminal(),
        episode_id=agent.loop.episode_id,
        step_idx=env.t - 1,
    ))
    agent.obs = next_obs
    return reward, done


def begin_episode(agent: Agent, env) -> None:
    seed = int(agent.rng_collect.integers(SEED_SPAN))
    agent.obs = env.reset(seed=seed)
    agent.warm = None
    agent.loop.episode_id += 1
    agent.loop.episode_return = 0.0


def model_update(agent: Agent) -> dict:
    cfg = agent.cfg
    batch = agent.buffer.sample_segments(agent.rng_train, cfg.run.batch_size,
                                         agent.planner_cfg.horizon)
    tape = ad.Tape()
    with ad.use_tape(tape):
        report = model_loss(agent.model, agent.policy, batch, agent.gamma,
                            agent.rng_train)
        tape.backward(report.total)
    clip_global_norm(agent.model.params, cfg.model.grad_clip)
    agent.model_opt.step()
    agent.model_opt.zero_grad()
    agent.tracker.update(report.td_targets)
    return {
        "model_loss": float(report.total.data),
        "consistency": report.consistency,
        "reward_ce": report.reward_ce,
        "value_ce": report.value_ce,
        "latents": report.latents,
        "batch": batch,
    }


def policy_update(agent: Agent, model_out: dict) -> dict:
    cfg = agent.cfg
    horizon = agent.planner_cfg.horizon
    latents = model_out["latents"][:horizon + 1]
    batch = model_out["batch"]
    beta_eff = agent.beta_now()
    tape = ad.Tape()
    with ad.use_tape(tape):
        if cfg.run.variant == "bc":
            z_flat = np.concatenate(latents, axis=0)
            mu_mean = batch["mu_mean"].reshape(-1, agent.action_dim)
            mu_std = batch["mu_std"].reshape(-1, agent.action_dim)
            report = bc_policy_loss(agent.policy, z_flat, mu_mean, mu_std,
                                    agent.policy_cfg, agent.tracker,
                                    agent.rng_train)
        else:
            report = policy_loss(agent.policy, agent.model, latents,
                                 batch["mu_mean"], batch["mu_std"],
                                 agent.policy_cfg, agent.tracker,
                                 agent.rng_train, beta_eff=beta_eff)
        tape.backward(report.total)
    clip_global_norm(agent.policy.params, cfg.policy.grad_clip)
    agent.policy_opt.step()
    agent.policy_opt.zero_grad()
    return {
        "policy_loss": float(report.total.data),
        "q_mean": report.q_mean,
        "entropy": report.entropy,
        "log_mu": report.log_mu,
        "beta_eff": report.beta_eff,
        "s_q": agent.tracker.spread,
    }


def train_step(agent: Agent) -> dict:
    """Model update, gate/tracker bookkeeping, policy update, Polyak."""
    if len(agent.buffer) == 0:
        raise ContractError("train_step on an empty buffer")
    model_out = model_update(agent)
    agent.gate.update(agent.tracker.spread)
    policy_out = policy_update(agent, model_out)
    agent.model.polyak_update(agent.cfg.model.polyak)
    out = {k: v for k, v in model_out.items() if k not in ("latents", "batch")}
    out.update(policy_out)
    return out


# ---------------------------------------------------------------- evaluation


def eval_seed(run_seed: int, env_step: int, k: int) -> int:
    return ((run_seed * 1_000_003 + env_step) * 1_003 + k) % SEED_SPAN


def build_env(cfg: RunConfig):
    kwargs = {}
    if cfg.env.name == "graph-world":
        kwargs["start"] = cfg.env.graph_start
    return make_env(cfg.env.name, dim=cfg.env.dim, seed=cfg.run.seed, **kwargs)


def evaluate_true_value(agent: Agent, env, episodes: int, base_step: int) -> tuple[float, float]:
    """Monte-Carlo (discounted value, undiscounted return) of the nominal
    policy from the initial distribution."""
    if episodes < 1:
        raise ConfigurationError(f"episodes must be >= 1, got {episodes}")
    values, returns = [], []
    for k in range(episodes):
        obs = env.reset(seed=eval_seed(agent.cfg.run.seed, base_step, k))
        g, total, disc = 0.0, 0.0, 1.0
        done = False
        while not done:
            z = agent.model.encode_np(obs[None])
            action = agent.policy.mean_action_np(z)[0]
            obs, reward, done = env.step(action)
            g += disc * reward
            total += reward
            disc *= agent.gamma
        values.append(g)
        returns.append(total)
    return float(np.mean(values)), float(np.mean(returns))


def evaluate_value_estimate(agent: Agent, env, samples: int, base_step: int) -> float:
    """Mean decoded ensemble Q at encoded initial states, actions from pi."""
    if samples < 1:
        raise ConfigurationError(f"samples must be >= 1, got {samples}")
    obs = np.stack([
        env.reset(seed=eval_seed(agent.cfg.run.seed, base_step, 10_000 + k))
        for k in range(samples)
    ])
    z = agent.model.encode_np(obs)
    rng = np.random.default_rng(eval_seed(agent.cfg.run.seed, base_step, 99))
    actions = agent.policy.sample_np(z, rng)
    q = agent.model.mean_q_np(z, actions)
    return float(np.mean(q))


def error_ratio(v_hat: float, v_true: float) -> float:
    return (v_hat - v_true) / max(abs(v_true), 1e-8)


# ---------------------------------------------------------------- experiment


@dataclass
class RunReport:
    out_dir: str
    metrics_path: str
    checkpoint_path: str
    summary: dict = field(default_factory=dict)


def pretrain(agent: Agent, env) -> None:
    cfg = agent.cfg
    begin_episode(agent, env)
    for _ in range(cfg.run.pretrain_steps):
        _, done = random_collect_step(agent, env)
        if done:
            begin_episode(agent, env)
    for _ in range(cfg.run.pretrain_updates):
        if len(agent.buffer) == 0:
            break
        out = model_update(agent)
        agent.gate.update(agent.tracker.spread)
        agent.model.polyak_update(cfg.model.polyak)
        del out
    agent.loop.pretrained = True


def write_summary(report: RunReport, rows_summary: dict) -> None:
    report.summary = rows_summary
    path = os.path.join(report.out_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows_summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: RunConfig, resume_from: str | None = None) -> RunReport:
    from . import checkpoint as ckpt
    from .config import config_to_text

    cfg.validate()
    env = build_env(cfg)
    if env.spec.discrete_actions is not None:
        raise ConfigurationError(
            f"{cfg.env.name} has discrete actions; the training loop supports "
            "continuous-action environments only"
        )
    out_dir = cfg.run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    checkpoint_path = os.path.join(out_dir, "checkpoint.npz")
    report = RunReport(out_dir=out_dir, metrics_path=metrics_path,
                       checkpoint_path=checkpoint_path)

    agent = Agent(cfg, env.spec.obs_dim, env.spec.action_dim)
    resuming = resume_from is not None
    if resuming:
        ckpt.load_checkpoint(resume_from, agent, env)
    else:
        with open(os.path.join(out_dir, "config.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(config_to_text(cfg))
        pretrain(agent, env)
        begin_episode(agent, env)

    eval_env = build_env(cfg)
    best_return = -np.inf
    last_row = None
    with MetricsWriter(metrics_path, append=resuming) as writer:
        if cfg.run.total_steps == 0 and not resuming:
            v_true, eval_ret = evaluate_true_value(
                agent, eval_env, cfg.run.eval_episodes, 0)
            v_hat = evaluate_value_estimate(
                agent, eval_env, cfg.run.eval_value_samples, 0)
            last_row = MetricsRow(
                env_step=0, episode_return=0.0, model_loss=0.0,
                consistency=0.0, reward_ce=0.0, value_ce=0.0,
                policy_loss=0.0, q_mean=0.0, entropy=0.0, log_mu=0.0,
                beta_eff=agent.beta_now(), s_q=agent.tracker.spread,
                v_hat=v_hat, v_true=v_true,
                ratio=error_ratio(v_hat, v_true), eval_return=eval_ret)
            writer.write(last_row)
            best_return = eval_ret
        while agent.loop.env_step < cfg.run.total_steps:
            reward, done = collect_step(agent, env)
            agent.loop.env_step += 1
            agent.loop.episode_return += reward
            if done:
                agent.loop.last_episode_return = agent.loop.episode_return
                begin_episode(agent, env)
            agent.loop.update_debt += cfg.run.update_ratio
            while agent.loop.update_debt >= 1.0:
                agent.loop.last_train = train_step(agent)
                agent.loop.update_debt -= 1.0
            frag = agent.loop.last_train
            step = agent.loop.env_step
            if step % cfg.run.log_interval == 0:
                v_true, eval_ret = evaluate_true_value(
                    agent, eval_env, cfg.run.eval_episodes, step)
                v_hat = evaluate_value_estimate(
                    agent, eval_env, cfg.run.eval_value_samples, step)
                best_return = max(best_return, eval_ret)
                last_row = MetricsRow(
                    env_step=step,
                    episode_return=agent.loop.last_episode_return,
                    model_loss=frag.get("model_loss", 0.0),
                    consistency=frag.get("consistency", 0.0),
                    reward_ce=frag.get("reward_ce", 0.0),
                    value_ce=frag.get("value_ce", 0.0),
                    policy_loss=frag.get("policy_loss", 0.0),
                    q_mean=frag.get("q_mean", 0.0),
                    entropy=frag.get("entropy", 0.0),
                    log_mu=frag.get("log_mu", 0.0),
                    beta_eff=frag.get("beta_eff", agent.beta_now()),
                    s_q=agent.tracker.spread,
                    v_hat=v_hat, v_true=v_true,
                    ratio=error_ratio(v_hat, v_true),
                    eval_return=eval_ret)
                writer.write(last_row)
            if (cfg.run.checkpoint_interval > 0
                    and step % cfg.run.checkpoint_interval == 0):
                ckpt.save_checkpoint(checkpoint_path, agent, env)

    ckpt.save_checkpoint(checkpoint_path, agent, env)
    summary = {
        "env_steps": agent.loop.env_step,
        "variant": cfg.run.variant,
        "seed": cfg.run.seed,
        "best_eval_return": float(best_return) if np.isfinite(best_return) else None,
        "final_eval_return": last_row.eval_return if last_row else None,
        "final_ratio": last_row.ratio if last_row else None,
        "final_v_hat": last_row.v_hat if last_row else None,
        "final_v_true": last_row.v_true if last_row else None,
        "clip_warnings": int(env.clip_warnings),
    }
    write_summary(report, summary)
    return report
