"""Run configuration: nested dataclasses loaded from YAML with strict keys."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .data import NOISE_KINDS
from .errors import ConfigError
from .hallucinator import HallucinatorConfig
from .ssl import SslConfig

MODES = ("baseline", "easy-only", "full")


@dataclass
class DataConfig:
    classes: int = 4
    per_class: int = 500
    val_per_class: int = 125
    test_per_class: int = 125
    input_dim: int = 16
    overlap: float = 0.7
    spread: float = 6.0
    context_frac: float = 0.25
    context_weight: float = 0.8


@dataclass
class NoiseConfig:
    kind: str = "feature-dependent"
    rate: float = 0.4
    parts: int = 4
    probe_epochs: int = 20
    class_map: list | None = None


@dataclass
class ModelConfig:
    d: int = 16
    hidden: list = field(default_factory=lambda: [32])
    hal_hidden: int | None = None


@dataclass
class TrainConfig:
    warmup_epochs: int = 10
    outer_iterations: int = 5
    cls_epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9


@dataclass
class SelectionConfig:
    percent: float = 60.0
    threshold: float = 0.5   # baseline mode only


@dataclass
class CorrectionConfig:
    lam_conf: float = 0.8
    K: int = 10
    min_confidence: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "full"
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    hallucinator: HallucinatorConfig = field(default_factory=HallucinatorConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    ssl: SslConfig = field(default_factory=SslConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.mode in MODES, f"mode must be one of {MODES}"),
            (self.noise.kind in NOISE_KINDS, f"noise.kind must be one of {NOISE_KINDS}"),
            (0 <= self.noise.rate < 1, "noise.rate must lie in [0, 1)"),
            (0 < self.selection.percent <= 100, "selection.percent must lie in (0, 100]"),
            (0.5 <= self.hallucinator.lam_p <= 1.0, "hallucinator.lam_p must lie in [0.5, 1]"),
            (-1 <= self.correction.lam_conf < 1, "correction.lam_conf must lie in [-1, 1)"),
            (self.correction.K >= 1, "correction.K must be >= 1"),
            (self.train.warmup_epochs >= 1, "train.warmup_epochs must be >= 1"),
            (self.train.outer_iterations >= 0, "train.outer_iterations must be >= 0"),
            (self.train.batch_size >= 1, "train.batch_size must be >= 1"),
            (self.model.d >= 1, "model.d must be >= 1"),
            (self.data.classes >= 2, "data.classes must be >= 2"),
            (isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes):
        """Copy with dotted-key overrides, e.g. ``replace(**{"correction.K": 5})``."""
        d = self.to_dict()
        for key, value in changes.items():
            node = d
            *path, last = key.split(".")
            for part in path:
                node = node[part]
            if last not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[last] = value
        return from_dict(d)


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        sub = type(default()) if default is not None else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def from_dict(raw):
    return _build(RunConfig, raw or {}, "")


def load_config(path):
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return from_dict(raw or {})


def dump_config(config: RunConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
    return path
