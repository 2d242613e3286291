"""Experiment configuration: nested dataclasses with a flat text format.

Config files are plain `section.key = value` lines (comments with #). Every
key must name an existing field; unknown keys are configuration errors so
typos fail loudly. Values are coerced to the field's default type.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .bins import BinSpec
from .exceptions import ConfigurationError, ParseError
from .planner import PlannerConfig
from .policy import PolicyConfig
from .worldmodel import WorldModelConfig

VARIANTS = ("constrained", "baseline-b0", "bc")


@dataclass
class EnvSection:
    name: str = "point-mass-chain"
    dim: int = 8
    graph_start: str = "left"


@dataclass
class RunSection:
    seed: int = 0
    total_steps: int = 20_000
    gamma: float = 0.9
    batch_size: int = 256
    update_ratio: float = 1.0
    pretrain_steps: int = 1000
    pretrain_updates: int = 1000
    log_interval: int = 1000
    eval_episodes: int = 20
    eval_value_samples: int = 8
    checkpoint_interval: int = 0
    variant: str = "constrained"
    out_dir: str = "runs/default"


@dataclass
class ModelSection:
    latent_dim: int = 64
    encoder_hidden: tuple = (256, 256)
    head_hidden: tuple = (128, 128)
    ensemble: int = 5
    dropout: float = 0.01
    lr: float = 3e-4
    grad_clip: float = 20.0
    polyak: float = 0.5
    bins: int = 101
    bins_low: float = -10.0
    bins_high: float = 10.0
    bins_transform: bool = True


@dataclass
class PlannerSection:
    horizon: int = 3
    iterations: int = 6
    samples: int = 512
    elites: int = 64
    policy_rollouts: int = 24
    temperature: float = 0.5
    std_min: float = 0.05
    std_max: float = 2.0


@dataclass
class PolicySection:
    hidden: tuple = (128, 128)
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    alpha: float = 1e-4
    beta: float = 1.0
    s_threshold: float = 2.0
    lam: float = 0.5
    ema_rate: float = 0.01
    lr: float = 3e-4
    grad_clip: float = 20.0


@dataclass
class BufferSection:
    capacity: int = 100_000


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    policy: PolicySection = field(default_factory=PolicySection)
    buffer: BufferSection = field(default_factory=BufferSection)

    def validate(self) -> "RunConfig":
        if self.run.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant {self.run.variant!r}; choose from "
                f"{', '.join(VARIANTS)}"
            )
        if not 0.0 < self.run.gamma < 1.0:
            raise ConfigurationError(f"gamma must be in (0,1), got {self.run.gamma}")
        if self.run.update_ratio < 0:
            raise ConfigurationError(
                f"update_ratio must be >= 0, got {self.run.update_ratio}"
            )
        if self.run.log_interval < 1:
            raise ConfigurationError(
                f"log_interval must be >= 1, got {self.run.log_interval}"
            )
        # Sub-config constructors run their own validation.
        self.planner_config()
        self.policy_config()
        return self

    def planner_config(self) -> PlannerConfig:
        p = self.planner
        return PlannerConfig(
            horizon=p.horizon, iterations=p.iterations, samples=p.samples,
            elites=p.elites, policy_rollouts=p.policy_rollouts,
            temperature=p.temperature, std_min=p.std_min, std_max=p.std_max,
        )

    def policy_config(self) -> PolicyConfig:
        p = self.policy
        beta = 0.0 if self.run.variant == "baseline-b0" else p.beta
        return PolicyConfig(
            hidden=tuple(p.hidden), log_std_min=p.log_std_min,
            log_std_max=p.log_std_max, alpha=p.alpha, beta=beta,
            s_threshold=p.s_threshold, lam=p.lam, ema_rate=p.ema_rate,
        )

    def model_config(self, obs_dim: int, action_dim: int) -> WorldModelConfig:
        m = self.model
        return WorldModelConfig(
            obs_dim=obs_dim, action_dim=action_dim, latent_dim=m.latent_dim,
            encoder_hidden=tuple(m.encoder_hidden),
            head_hidden=tuple(m.head_hidden), ensemble_size=m.ensemble,
            q_dropout=m.dropout,
            bins=BinSpec(n_bins=m.bins, v_min=m.bins_low, v_max=m.bins_high,
                         transform=m.bins_transform),
        )


def _coerce(raw: str, default, key: str, lineno: int):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            return tuple(int(p.strip()) for p in raw.split(","))
        return raw
    except ValueError as exc:
        raise ParseError(f"line {lineno}: bad value for {key!r}: {exc}") from exc


def apply_overrides(cfg: RunConfig, pairs, lineno_base: int = 0) -> RunConfig:
    """pairs: iterable of (key, value, lineno) with dotted keys."""
    sections = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    for key, value, lineno in pairs:
        if "." not in key:
            raise ConfigurationError(
                f"line {lineno}: key {key!r} must be section.field"
            )
        section_name, field_name = key.split(".", 1)
        if section_name not in sections:
            raise ConfigurationError(
                f"line {lineno}: unknown section {section_name!r} in {key!r}"
            )
        section = sections[section_name]
        names = {f.name for f in dataclasses.fields(section)}
        if field_name not in names:
            raise ConfigurationError(
                f"line {lineno}: unknown key {key!r}"
            )
        default = getattr(section, field_name)
        setattr(section, field_name, _coerce(value, default, key, lineno))
    return cfg


def parse_config(text: str) -> RunConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        pairs.append((key.strip(), value, lineno))
    cfg = apply_overrides(RunConfig(), pairs)
    return cfg.validate()


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for section_field in dataclasses.fields(cfg):
        section = getattr(cfg, section_field.name)
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                rendered = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{section_field.name}.{f.name} = {rendered}")
    return "\n".join(lines) + "\n"
