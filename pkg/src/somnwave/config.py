"""Versioned TOML pipeline configuration.

Every table and key is checked against the schema below; unknown keys raise
:class:`ConfigError` so typos never silently fall back to defaults.

Example::

    schema_version = 1
    seed = 0

    [data]
    dir = "data/sleep-cassette"
    channel = "EEG Fpz-Cz"
    max_subjects = 10

    [evaluation]
    mode = "kfold"
    k = 5
"""

from __future__ import annotations

import copy
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from somnwave.exceptions import ConfigError
from somnwave.model.ensemble import KINDS, ClassifierSpec
from somnwave.preprocess import ArtifactPolicy, FilterSpec

SCHEMA_VERSION = 1
DATA_ENV = "SOMNWAVE_DATA_DIR"


@dataclass
class DataConfig:
    dir: str = ""
    channel: str = "EEG Fpz-Cz"
    max_subjects: int = 0        # 0 keeps every discovered subject


@dataclass
class PreprocessConfig:
    low_hz: float = 0.5
    high_hz: float = 40.0
    order: int = 4
    amplitude_limit_uv: float = 250.0
    max_flat_fraction: float = 0.5
    wake_margin_epochs: int = 60   # negative disables trimming

    def filter_spec(self):
        return FilterSpec(self.low_hz, self.high_hz, self.order)

    def artifact_policy(self):
        return ArtifactPolicy(self.amplitude_limit_uv, self.max_flat_fraction)

    @property
    def wake_margin(self):
        return None if self.wake_margin_epochs < 0 else self.wake_margin_epochs


@dataclass
class FeatureConfig:
    dwt: bool = True
    cwt: bool = True


@dataclass
class SelectConfig:
    rfecv: bool = True
    n_folds: int = 5
    step: int = 1
    n_estimators: int = 40
    max_depth: int = 12
    pca: bool = True
    variance_target: float = 0.95


@dataclass
class ModelConfig:
    members: list = field(default_factory=lambda: ["svm_rbf", "gradient_boosting"])
    weights: list = field(default_factory=list)     # empty means equal weights
    class_weighting: str = "none"
    svm_rbf: dict = field(default_factory=dict)
    gradient_boosting: dict = field(default_factory=dict)
    random_forest: dict = field(default_factory=dict)

    def specs(self, seed):
        return [ClassifierSpec(kind, dict(getattr(self, kind)), self.class_weighting, seed)
                for kind in self.members]


@dataclass
class EvaluationConfig:
    mode: str = "kfold"          # "kfold" or "holdout"
    k: int = 5
    ratios: list = field(default_factory=lambda: [0.70, 0.15, 0.15])


@dataclass
class OutputConfig:
    dir: str = "somnwave-run"
    bundle: bool = True          # refit on all subjects and save a model bundle
    svg: bool = True


@dataclass
class PipelineConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def data_dir(self):
        """Configured data directory, falling back to ``$SOMNWAVE_DATA_DIR``."""
        d = self.data.dir or os.environ.get(DATA_ENV, "")
        if not d:
            raise ConfigError(f"no data directory: set [data] dir or ${DATA_ENV}")
        return Path(d)

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        try:
            self.preprocess.filter_spec().validate(100.0)
            self.preprocess.artifact_policy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.evaluation.mode not in ("kfold", "holdout"):
            raise ConfigError(f"evaluation.mode must be 'kfold' or 'holdout', "
                              f"got {self.evaluation.mode!r}")
        if self.evaluation.k < 2:
            raise ConfigError("evaluation.k must be >= 2")
        if len(self.evaluation.ratios) != 3 or abs(sum(self.evaluation.ratios) - 1) > 1e-9:
            raise ConfigError("evaluation.ratios needs three values summing to 1")
        if self.select.step < 1 or self.select.n_folds < 2:
            raise ConfigError("select.step must be >= 1 and select.n_folds >= 2")
        if not 0 < self.select.variance_target <= 1:
            raise ConfigError("select.variance_target must lie in (0, 1]")
        m = self.model
        if not m.members:
            raise ConfigError("model.members must name at least one classifier")
        for kind in m.members:
            if kind not in KINDS:
                raise ConfigError(f"unknown classifier kind {kind!r}")
        if m.weights and (len(m.weights) != len(m.members) or any(w < 0 for w in m.weights)
                          or sum(m.weights) <= 0):
            raise ConfigError("model.weights must be non-negative, one per member")
        for spec in m.specs(self.seed):
            spec.validate()
        return self


_SECTIONS = {f.name: f.type for f in fields(PipelineConfig)}


def _build(cls, table, where):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    obj = cls()
    for key, value in table.items():
        default = getattr(obj, key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{where}.{key} must be a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key} must be a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{where}.{key} must be an integer")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{where}.{key} must be a string")
        if isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"{where}.{key} must be an array")
        if isinstance(default, dict) and not isinstance(value, dict):
            raise ConfigError(f"{where}.{key} must be a table")
        setattr(obj, key, copy.deepcopy(value))
    return obj


def config_from_dict(raw):
    raw = dict(raw)
    cfg = PipelineConfig()
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    for name, value in raw.items():
        current = getattr(cfg, name)
        if hasattr(current, "__dataclass_fields__"):
            setattr(cfg, name, _build(type(current), value, name))
        else:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer")
            setattr(cfg, name, value)
    return cfg.validate()


def load_config(path=None):
    """Read and validate a TOML config; ``None`` gives the validated defaults."""
    if path is None:
        return PipelineConfig().validate()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    return config_from_dict(raw)
