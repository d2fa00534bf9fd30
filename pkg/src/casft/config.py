"""Experiment configuration: one JSON document, nested by section."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .solvers import SOLVERS, SolverSpec

DAY = 86400.0
HOUR = 3600.0
YEAR = 365.0  # APS timestamps are in days

# (t_obs, t_pred) per dataset and observation setting, in the corpora's native units
PRESETS = {
    "twitter-1d": (1 * DAY, 15 * DAY),
    "twitter-2d": (2 * DAY, 15 * DAY),
    "aps-3y": (3 * YEAR, 20 * YEAR),
    "aps-5y": (5 * YEAR, 20 * YEAR),
    "weibo-0.5h": (0.5 * HOUR, 24 * HOUR),
    "weibo-1h": (1 * HOUR, 24 * HOUR),
}

VARIANTS = ("full", "no_ft", "no_ode", "no_diffusion", "fm")


def _default_synthetic() -> dict:
    return dict(n=600, mu=[0.5, 3.0], alpha=[0.2, 0.8], delta=[0.5, 3.0], mu_decay=[0.0, 0.15],
                horizon=36.0, n_users=3000, zipf_a=1.1)


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or a cascade file path
    format: str = "jsonl"
    t_obs: float = 6.0
    t_pred: float = 36.0
    intervals: int = 8
    min_observed: int = 10
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    max_seq_len: int | None = None  # keep only the first N observed events
    synthetic: dict = field(default_factory=_default_synthetic)


@dataclass
class EmbedConfig:
    n_scales: int = 2
    n_points: int = 16
    max_point: float = 100.0
    d_g: int = 64
    window: int = 10
    negative: float = 1.0
    rank: int | None = None
    dense_limit: int = 2000

    @property
    def d_c(self) -> int:
        return 2 * self.n_scales * self.n_points


@dataclass
class ModelConfig:
    variant: str = "full"
    d_attn: int = 64
    d_h: int = 64
    head_width: int = 64
    pooling: str = "last"
    cue_mode: str = "absolute"
    time_input: bool = True


@dataclass
class ODEConfig:
    method: str = "dopri5"
    rtol: float = 1e-5
    atol: float = 1e-5
    step: float = 0.05
    time_scale: float | None = None  # ODE clock unit; None -> t_obs

    def spec(self) -> SolverSpec:
        return SolverSpec(self.method, self.rtol, self.atol, self.step)


@dataclass
class DiffusionConfig:
    K: int = 1000
    schedule: str = "linear"
    beta_min: float = 1e-4
    beta_max: float = 0.02
    ddim_steps: int = 50
    eta: float = 0.0
    num_samples: int = 1
    width: int = 128
    layers: int = 3


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    gamma: float = 0.1
    seed: int = 0
    grad_clip: float | None = 5.0
    eval_every: int = 1


@dataclass
class RunConfig:
    out_dir: str = "runs/default"
    cache_dir: str | None = None


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ode: ODEConfig = field(default_factory=ODEConfig)
    diff: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # sections that do not change results
    _unhashed = ("run",)

    def validate(self) -> "ExperimentConfig":
        d = self.data
        if not 0 < d.t_obs < d.t_pred:
            raise ValueError("need 0 < t_obs < t_pred")
        if d.intervals < 1:
            raise ValueError("need at least one interval")
        if abs(sum(d.split) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if self.embed.d_c % 2:
            raise ValueError("temporal encoding dimension B = d_c must be even")
        if self.ode.method not in SOLVERS:
            raise ValueError(f"unknown ODE solver {self.ode.method!r}; choose one of {', '.join(SOLVERS)}")
        if self.model.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.model.variant!r}; choose one of {VARIANTS}")
        if self.diff.ddim_steps > self.diff.K:
            raise ValueError("ddim_steps cannot exceed K")
        if self.train.gamma < 0:
            raise ValueError("gamma must be non-negative")
        return self

    @property
    def B(self) -> int:
        return self.embed.d_c

    @property
    def time_scale(self) -> float:
        return self.ode.time_scale or self.data.t_obs

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls()
        for section, values in d.items():
            if section.startswith("_"):
                continue
            target = getattr(cfg, section)
            for key, value in values.items():
                if not hasattr(target, key):
                    raise KeyError(f"unknown config key {section}.{key}")
                if isinstance(getattr(target, key), tuple) and isinstance(value, list):
                    value = tuple(value)
                setattr(target, key, value)
        return cfg.validate()

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self._unhashed}
        blob = json.dumps(_canonical(d), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **dotted: Any) -> "ExperimentConfig":
        """Copy with ``section.key`` overrides, e.g. ``with_overrides(**{"diff.K": 500})``."""
        cfg = copy.deepcopy(self)
        for path, value in dotted.items():
            section, key = path.split(".", 1)
            target = getattr(cfg, section)
            if not hasattr(target, key):
                raise KeyError(f"unknown config key {path}")
            setattr(target, key, value)
        return cfg.validate()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=list))


def _canonical(v):
    # 6 and 6.0 denote the same setting
    if isinstance(v, dict):
        return {k: _canonical(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_canonical(x) for x in v]
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def data_root() -> Path:
    return Path(os.environ.get("CASFT_DATA_DIR", "."))


def resolve_data_path(source: str) -> Path:
    p = Path(source)
    return p if p.is_absolute() else data_root() / p


def apply_preset(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    t_obs, t_pred = PRESETS[name]
    return cfg.with_overrides(**{"data.t_obs": t_obs, "data.t_pred": t_pred})
