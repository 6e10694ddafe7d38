"""Experiment configuration: nested dataclasses that round-trip through JSON, plus named presets."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .model import DecoderConfig, EncoderConfig, MissingModelSpec
from .objective import TrainConfig


class ConfigError(ValueError):
    pass


SYNTHETIC_KINDS = ("gaussian_2d", "banknote_like", "lowrank_gaussian", "clipping")
MECHANISMS = ("threshold", "logistic", "mcar", "none")


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "csv"
    path: str | None = None
    header: bool = False
    name: str = "banknote_like"
    synthetic: str = "banknote_like"
    n: int = 1372
    p: int = 4
    rank: int = 2
    noise: float | None = None  # None -> the generator's own default
    mean: list[float] = field(default_factory=lambda: [0.0, 0.0])
    cov: list[list[float]] = field(default_factory=lambda: [[1.0, 0.8], [0.8, 1.0]])
    standardize: bool = True

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("data.path is required when data.source is 'csv'")
        if self.source == "synthetic" and self.synthetic not in SYNTHETIC_KINDS:
            raise ConfigError(f"unknown synthetic dataset {self.synthetic!r}")
        if self.n < 1 or self.p < 1:
            raise ConfigError("data.n and data.p must be positive")


@dataclass
class MechanismConfig:
    kind: str = "threshold"
    offset: float = 0.0
    W: float = -50.0
    b: float = 0.75
    rate: float = 0.0
    affected_features: Any = "first_half"

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError("mechanism.rate must lie in [0, 1]")

    def descriptor(self) -> dict:
        return asdict(self)


@dataclass
class ModelConfig:
    latent_dim: int | None = None  # None -> p - 1 (at least 1)
    encoder_hidden: list[int] = field(default_factory=lambda: [128, 128])
    activation: str = "tanh"
    decoder: str = "linear_ppca"
    decoder_hidden: list[int] = field(default_factory=lambda: [128, 128])
    variance_sharing: str = "per_feature"
    class_count: int = 2
    missing_kind: str = "self_masking_known"
    fixed_W: float = -50.0
    fixed_b: float = 0.75
    known_signs: list[float] | None = None
    std_floor: float = 0.01

    def build(self, p: int) -> tuple[EncoderConfig, DecoderConfig, MissingModelSpec]:
        d = self.latent_dim if self.latent_dim is not None else max(1, p - 1)
        try:
            enc = EncoderConfig(p, d, tuple(self.encoder_hidden), self.activation)
            dec = DecoderConfig(
                self.decoder, tuple(self.decoder_hidden), self.activation, self.class_count, self.variance_sharing
            )
            spec = MissingModelSpec(self.missing_kind, self.fixed_W, self.fixed_b, self.known_signs)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return enc, dec, spec


@dataclass
class TrainingConfig:
    K: int = 20
    batch_size: int = 16
    iterations: int = 20_000
    learning_rate: float = 1e-3
    objective_kind: str = "not_miwae"
    log_every: int = 0
    record_wall_time: bool = False  # wall_ms is 0 unless set, so traces stay byte-identical

    def build(self, seed: int) -> TrainConfig:
        try:
            return TrainConfig(
                self.K, self.batch_size, self.iterations, self.learning_rate, seed, self.objective_kind,
                self.record_wall_time,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class ImputationConfig:
    K: int = 10_000
    estimator: str = "snis_mean_rao_blackwell"
    draws: int = 0
    histogram_bins: int = 40

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("imputation.K must be >= 1")
        if self.draws < 0 or self.histogram_bins < 1:
            raise ConfigError("imputation.draws must be >= 0 and histogram_bins >= 1")


@dataclass
class EvaluationConfig:
    loglik_L: int = 0  # 0 skips the test log-likelihood
    refit_iterations: int = 0
    mask_features: str = "affected"  # or "all"


@dataclass
class SweepVariant:
    objective_kind: str = "not_miwae"
    missing_kind: str = "self_masking_known"


@dataclass
class SweepConfig:
    offsets: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    variants: list[SweepVariant] = field(
        default_factory=lambda: [SweepVariant("not_miwae", "self_masking_known"), SweepVariant("miwae", "self_masking")]
    )
    seeds: list[int] = field(default_factory=lambda: [0, 1])
    workers: int = 1


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    imputation: ImputationConfig = field(default_factory=ImputationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    out: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        return _build(cls, blob, "")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            blob = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(blob)


_NESTED = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "mechanism"): MechanismConfig,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "training"): TrainingConfig,
    (ExperimentConfig, "imputation"): ImputationConfig,
    (ExperimentConfig, "evaluation"): EvaluationConfig,
    (ExperimentConfig, "sweep"): SweepConfig,
}


def _build(cls, blob, where: str):
    if not isinstance(blob, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(blob) - known
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {where or 'config'}")
    kwargs = {}
    for name, value in blob.items():
        sub = _NESTED.get((cls, name))
        path = f"{where}.{name}" if where else name
        if sub is not None:
            kwargs[name] = _build(sub, value, path)
        elif cls is SweepConfig and name == "variants":
            kwargs[name] = [_build(SweepVariant, v, path) for v in value]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


def merge(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Deep-merge a partial JSON object into ``base``."""
    blob = base.to_dict()

    def deep(dst, src):
        for k, v in src.items():
            if isinstance(v, dict) and isinstance(dst.get(k), dict):
                deep(dst[k], v)
            else:
                dst[k] = v

    deep(blob, copy.deepcopy(overrides))
    return ExperimentConfig.from_dict(blob)


# UCI protocol: two 128-unit tanh layers, latent p-1, K=20, batch 16, lr 1e-3.
# The original iteration count was 100k; desk scale uses 20k.
PRESETS: dict[str, dict] = {
    "uci": {
        "data": {"synthetic": "banknote_like", "name": "banknote_like", "n": 1372, "p": 4},
        "mechanism": {"kind": "threshold", "offset": 0.0, "affected_features": "first_half"},
        "model": {"decoder": "mlp_gaussian", "missing_kind": "self_masking_known"},
        "out": "runs/uci",
    },
    "ppca": {
        "data": {"synthetic": "banknote_like", "name": "banknote_like", "n": 1372, "p": 4},
        "mechanism": {"kind": "threshold", "offset": 0.0, "affected_features": "first_half"},
        "model": {"decoder": "linear_ppca", "missing_kind": "self_masking_known"},
        "imputation": {"K": 1000},
        "out": "runs/ppca",
    },
    "fig1b": {
        "data": {"synthetic": "gaussian_2d", "name": "gaussian_2d", "n": 2000, "p": 2,
                 "mean": [0.0, 0.0], "cov": [[1.0, 0.8], [0.8, 1.0]]},
        "mechanism": {"kind": "threshold", "offset": 0.0, "affected_features": [0]},
        "model": {"decoder": "linear_ppca", "latent_dim": 1, "missing_kind": "self_masking"},
        "training": {"iterations": 10_000},
        "imputation": {"K": 1000},
        "out": "runs/fig1b",
    },
    "clipping": {
        "data": {"synthetic": "clipping", "name": "clipping", "n": 2000, "p": 8, "rank": 2, "standardize": False},
        "mechanism": {"kind": "logistic", "W": -50.0, "b": 0.75},
        "model": {"decoder": "mlp_gaussian", "latent_dim": 2, "missing_kind": "fixed", "fixed_W": -50.0,
                  "fixed_b": 0.75},
        "training": {"iterations": 5000},
        "imputation": {"K": 1000},
        "out": "runs/clipping",
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return merge(ExperimentConfig(), PRESETS[name])
