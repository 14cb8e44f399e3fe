"""Run configuration: one JSON document, strict, with a default for every field.

Sections map one-to-one onto the dataclasses below. Unknown keys anywhere
raise :class:`~stochattn.errors.InvalidConfig`, as do values of the wrong
type; missing keys take their defaults.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from .backbone import EncoderConfig
from .errors import InvalidConfig


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "sinusoid"
    n: int = 1000
    x_range: tuple = (-3.0, 3.0)
    amplitude: float = 1.0
    frequency: float = 1.0
    noise_sigma: float = 0.5
    seed: int = 0
    csv_path: str | None = None
    target_column: str | None = None
    feature_columns: tuple | None = None
    standardize: bool = True


@dataclass(frozen=True)
class SplitConfig:
    train_frac: float = 0.8
    cal_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class SAConfig:
    nu_min: int = 1
    nu_max: int = 128
    B: int = 25
    M: int = 32
    batch_size: int = 4
    K: int = 20
    master_seed: int = 0
    ensemble_size: int = 64
    stochastic_layers: tuple | None = None


@dataclass(frozen=True)
class BaselineConfig:
    methods: tuple = ("mc_dropout", "swag_diag", "deep_ensemble")
    ensemble_size: int = 64
    dropout_rate: float = 0.1
    dropout_location: str = "pooled_features"
    swag_scale: float = 1.0
    swag_steps: int = 2000
    swag_lr: float = 0.01
    swag_batch_size: int = 16
    swag_burn_in: int = 500
    swag_snapshot_every: int = 50
    bootstrap_members: int = 16


@dataclass(frozen=True)
class MetricConfig:
    levels: tuple = (0.5, 0.8, 0.9, 0.95)
    primary_level: float = 0.95
    pit_bins: int = 20
    temperature_mode: str = "w1"


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    ridge: float = 0.1
    sa: SAConfig = field(default_factory=SAConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    output_dir: str = "runs/default"


_SECTIONS = {
    "dataset": DatasetConfig, "split": SplitConfig, "encoder": EncoderConfig,
    "sa": SAConfig, "baselines": BaselineConfig, "metrics": MetricConfig,
}
_KNOWN_METHODS = ("mc_dropout", "swag_diag", "deep_ensemble")


def _coerce(name, value, default):
    """Check ``value`` against the type of ``default`` (JSON lists become tuples)."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple) or default is None:
        if isinstance(value, list):
            value = tuple(value)
        ok = value is None or isinstance(value, (tuple, str, int, float))
    else:
        ok = True
    if not ok:
        raise InvalidConfig(f"{name}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise InvalidConfig(f"{prefix}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise InvalidConfig(f"{prefix}: unknown field(s) {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in doc.items():
        name = f"{prefix}.{key}" if prefix else key
        if key in _SECTIONS and cls is RunConfig:
            kwargs[key] = _build(_SECTIONS[key], value, name)
        else:
            kwargs[key] = _coerce(name, value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except InvalidConfig:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{prefix or 'config'}: {exc}") from None


def validate(cfg):
    """Cross-field checks; returns ``cfg`` unchanged."""
    d = cfg.dataset
    if d.kind not in ("sinusoid", "csv"):
        raise InvalidConfig(f"dataset.kind must be 'sinusoid' or 'csv', got {d.kind!r}")
    if d.kind == "csv":
        if not d.csv_path or not os.path.isfile(d.csv_path):
            raise InvalidConfig(f"dataset.csv_path does not exist: {d.csv_path!r}")
        if not d.target_column:
            raise InvalidConfig("dataset.target_column is required for csv data")
    else:
        if len(d.x_range) != 2 or not d.x_range[0] < d.x_range[1]:
            raise InvalidConfig(f"dataset.x_range must be (lo, hi) with lo < hi, got {d.x_range}")
        if d.n < 3 or d.noise_sigma < 0:
            raise InvalidConfig("dataset.n must be >= 3 and noise_sigma >= 0")
    fracs = (cfg.split.train_frac, cfg.split.cal_frac, cfg.split.test_frac)
    if any(not 0 < f < 1 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-12:
        raise InvalidConfig(f"split fractions must lie in (0, 1) and sum to 1, got {fracs}")
    if cfg.ridge < 0:
        raise InvalidConfig("ridge must be non-negative")
    s = cfg.sa
    if s.nu_min < 1 or s.nu_max < s.nu_min:
        raise InvalidConfig(f"sa domain [{s.nu_min}, {s.nu_max}] is empty")
    for name in ("B", "M", "batch_size", "K"):
        if getattr(s, name) < 1:
            raise InvalidConfig(f"sa.{name} must be >= 1")
    if d.kind == "sinusoid":
        n_cal = int(math.floor(cfg.split.cal_frac * d.n + 1e-9))
        if s.B * s.batch_size > n_cal:
            raise InvalidConfig(f"sa.B * sa.batch_size = {s.B * s.batch_size} exceeds the "
                                f"{n_cal} calibration cases")
    if s.ensemble_size < 2 or cfg.baselines.ensemble_size < 2:
        raise InvalidConfig("ensemble sizes must be >= 2")
    if s.stochastic_layers is not None and any(
            not 0 <= int(i) < cfg.encoder.n_layers for i in s.stochastic_layers):
        raise InvalidConfig(f"sa.stochastic_layers out of range: {s.stochastic_layers}")
    b = cfg.baselines
    bad = [m for m in b.methods if m not in _KNOWN_METHODS]
    if bad:
        raise InvalidConfig(f"unknown baseline method(s) {bad}")
    if not 0 <= b.dropout_rate < 1:
        raise InvalidConfig("baselines.dropout_rate must lie in [0, 1)")
    if b.bootstrap_members < 2 or b.swag_scale < 0:
        raise InvalidConfig("bootstrap_members must be >= 2 and swag_scale >= 0")
    m = cfg.metrics
    if not m.levels or any(not 0 < lv < 1 for lv in m.levels):
        raise InvalidConfig("metrics.levels must be a nonempty list in (0, 1)")
    if m.primary_level not in m.levels:
        raise InvalidConfig("metrics.primary_level must be one of metrics.levels")
    if m.temperature_mode not in ("w1", "coverage"):
        raise InvalidConfig("metrics.temperature_mode must be 'w1' or 'coverage'")
    return cfg


def from_dict(doc):
    return validate(_build(RunConfig, doc, ""))


def load(path):
    """Parse and validate a config file."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from None
    return from_dict(doc)


def to_dict(cfg):
    return dataclasses.asdict(cfg)
