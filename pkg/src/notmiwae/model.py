"""Encoder, decoder and missing-data (mask) model.

Parameters live in three disjoint name -> Tensor collections:
``gamma`` (encoder), ``theta`` (decoder) and ``phi`` (mask model).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .distributions import BernoulliLogits, CategoricalLogits, GaussianParams
from .tensor import Tensor

CHECKPOINT_VERSION = 1

ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}
DECODER_KINDS = ("mlp_gaussian", "linear_ppca", "categorical")
MISSING_KINDS = ("fixed", "self_masking", "self_masking_known", "agnostic")


@dataclass
class EncoderConfig:
    input_dim: int
    latent_dim: int
    hidden_widths: tuple[int, ...] = (128, 128)
    activation: str = "tanh"

    def __post_init__(self):
        self.hidden_widths = tuple(self.hidden_widths)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class DecoderConfig:
    kind: str = "mlp_gaussian"
    hidden_widths: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    class_count: int = 0
    variance_sharing: str = "per_feature"

    def __post_init__(self):
        self.hidden_widths = tuple(self.hidden_widths)
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        if self.kind == "linear_ppca":
            self.hidden_widths = ()
            self.variance_sharing = "shared_scalar"
        if self.kind == "categorical" and self.class_count < 2:
            raise ValueError("categorical decoder needs class_count >= 2")
        if self.variance_sharing not in ("per_feature", "shared_scalar"):
            raise ValueError(f"unknown variance_sharing {self.variance_sharing!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MissingModelSpec:
    kind: str = "self_masking_known"
    fixed_W: float = -50.0
    fixed_b: float = 0.75
    # one of {-1, +1} per feature; None means -1 everywhere (high values go missing)
    known_signs: list[float] | None = None

    def __post_init__(self):
        if self.kind not in MISSING_KINDS:
            raise ValueError(f"unknown missing-model kind {self.kind!r}")
        if self.known_signs is not None:
            self.known_signs = [float(v) for v in self.known_signs]
            if any(v not in (-1.0, 1.0) for v in self.known_signs):
                raise ValueError("known_signs entries must be -1 or +1")

    def signs(self, p: int) -> np.ndarray:
        if self.known_signs is None:
            return -np.ones(p)
        if len(self.known_signs) != p:
            raise ValueError(f"known_signs has {len(self.known_signs)} entries, expected {p}")
        return np.asarray(self.known_signs)


@dataclass
class ModelParams:
    theta: dict[str, Tensor] = field(default_factory=dict)
    phi: dict[str, Tensor] = field(default_factory=dict)
    gamma: dict[str, Tensor] = field(default_factory=dict)

    def collections(self) -> dict[str, dict[str, Tensor]]:
        return {"theta": self.theta, "phi": self.phi, "gamma": self.gamma}

    def named(self) -> list[tuple[str, Tensor]]:
        return [(f"{c}.{k}", t) for c, d in self.collections().items() for k, t in d.items()]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            **{
                c: {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in d.items()}
                for c, d in self.collections().items()
            }
        )


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_mlp(store: dict, prefix: str, widths: list[int], rng) -> None:
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        store[f"{prefix}{i}.W"] = Tensor(glorot(rng, a, b), requires_grad=True)
        store[f"{prefix}{i}.b"] = Tensor(np.zeros(b), requires_grad=True)


def _run_mlp(store: dict, prefix: str, h: Tensor, n_layers: int, act) -> Tensor:
    for i in range(n_layers):
        h = act(h @ store[f"{prefix}{i}.W"] + store[f"{prefix}{i}.b"])
    return h


def _dense(store: dict, name: str, h: Tensor) -> Tensor:
    return h @ store[f"{name}.W"] + store[f"{name}.b"]


@dataclass
class Model:
    """A deep latent variable model plus an explicit mask model."""

    encoder: EncoderConfig
    decoder: DecoderConfig
    missing: MissingModelSpec
    params: ModelParams
    std_floor: float = 0.01

    @property
    def p(self) -> int:
        return self.encoder.input_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.latent_dim

    # -- encoder -----------------------------------------------------------
    def encode(self, x_obs, mask) -> GaussianParams:
        x = T.constant(x_obs)
        mask = np.asarray(mask, dtype=np.float64)
        if x.shape[-1] != self.p or mask.shape != x.shape:
            raise ValueError(f"encoder expects (batch, {self.p}) inputs with a matching mask, got {x.shape}")
        # re-applying the mask keeps q a function of (x^o, s) only
        h = x * mask
        g = self.params.gamma
        h = _run_mlp(g, "enc", h, len(self.encoder.hidden_widths), ACTIVATIONS[self.encoder.activation])
        mu = _dense(g, "enc_mu", h)
        std = T.softplus(_dense(g, "enc_sd", h)) + self.std_floor
        return GaussianParams(mu, std)

    # -- decoder -----------------------------------------------------------
    def decode(self, z) -> GaussianParams | CategoricalLogits:
        z = T.constant(z)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"decoder expects latent dim {self.latent_dim}, got {z.shape}")
        th = self.params.theta
        cfg = self.decoder
        h = _run_mlp(th, "dec", z, len(cfg.hidden_widths), ACTIVATIONS[cfg.activation])
        if cfg.kind == "categorical":
            logits = _dense(th, "dec_logits", h)
            logits = T.reshape(logits, z.shape[:-1] + (self.p, cfg.class_count))
            return CategoricalLogits(logits)
        mu = _dense(th, "dec_mu", h)
        if cfg.variance_sharing == "shared_scalar":
            # scalar; broadcasts against the mean
            std = T.softplus(th["dec_sd_raw"]) + self.std_floor
        else:
            std = T.softplus(_dense(th, "dec_sd", h)) + self.std_floor
        return GaussianParams(mu, std)

    # -- mask model --------------------------------------------------------
    def mask_logits(self, x_mixed) -> BernoulliLogits:
        x = T.constant(x_mixed)
        spec = self.missing
        ph = self.params.phi
        if spec.kind == "fixed":
            logits = (x - spec.fixed_b) * spec.fixed_W
        elif spec.kind == "self_masking":
            logits = x * ph["a"] + ph["b"]
        elif spec.kind == "self_masking_known":
            slope = T.softplus(ph["a_raw"]) * spec.signs(self.p)
            logits = x * slope + ph["b"]
        elif spec.kind == "agnostic":
            logits = x @ ph["W"] + ph["b"]
        else:
            raise ValueError(f"unknown missing-model kind {spec.kind!r}")
        return BernoulliLogits(logits)

    def mask_slopes(self) -> np.ndarray | None:
        """Effective per-feature slope of a self-masking model (None otherwise)."""
        ph = self.params.phi
        if self.missing.kind == "self_masking":
            return ph["a"].data.copy()
        if self.missing.kind == "self_masking_known":
            return np.logaddexp(0.0, ph["a_raw"].data) * self.missing.signs(self.p)
        if self.missing.kind == "fixed":
            return np.full(self.p, self.missing.fixed_W)
        return None


def init_model(
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    missing: MissingModelSpec,
    rng: np.random.Generator,
    std_floor: float = 0.01,
) -> Model:
    p, d = encoder.input_dim, encoder.latent_dim
    gamma: dict[str, Tensor] = {}
    widths = [p, *encoder.hidden_widths]
    _init_mlp(gamma, "enc", widths, rng)
    _init_mlp(gamma, "enc_mu", [widths[-1], d], rng)
    _init_mlp(gamma, "enc_sd", [widths[-1], d], rng)
    for head in ("enc_mu", "enc_sd"):
        gamma[f"{head}.W"], gamma[f"{head}.b"] = gamma.pop(f"{head}0.W"), gamma.pop(f"{head}0.b")

    theta: dict[str, Tensor] = {}
    widths = [d, *decoder.hidden_widths]
    _init_mlp(theta, "dec", widths, rng)
    heads = ["dec_mu"]
    if decoder.kind == "categorical":
        heads = ["dec_logits"]
        _init_mlp(theta, "dec_logits", [widths[-1], p * decoder.class_count], rng)
    else:
        _init_mlp(theta, "dec_mu", [widths[-1], p], rng)
        if decoder.variance_sharing == "per_feature":
            heads.append("dec_sd")
            _init_mlp(theta, "dec_sd", [widths[-1], p], rng)
        else:
            theta["dec_sd_raw"] = Tensor(np.zeros(()), requires_grad=True)
    for head in heads:
        theta[f"{head}.W"], theta[f"{head}.b"] = theta.pop(f"{head}0.W"), theta.pop(f"{head}0.b")

    phi: dict[str, Tensor] = {}
    if missing.kind == "self_masking":
        phi["a"] = Tensor(np.full(p, 0.01), requires_grad=True)
        phi["b"] = Tensor(np.zeros(p), requires_grad=True)
    elif missing.kind == "self_masking_known":
        missing.signs(p)
        phi["a_raw"] = Tensor(np.full(p, 0.01), requires_grad=True)
        phi["b"] = Tensor(np.zeros(p), requires_grad=True)
    elif missing.kind == "agnostic":
        phi["W"] = Tensor(glorot(rng, p, p), requires_grad=True)
        phi["b"] = Tensor(np.zeros(p), requires_grad=True)

    return Model(encoder, decoder, missing, ModelParams(theta=theta, phi=phi, gamma=gamma), std_floor)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def model_to_dict(model: Model) -> dict[str, Any]:
    return {
        "version": CHECKPOINT_VERSION,
        "encoder": asdict(model.encoder),
        "decoder": asdict(model.decoder),
        "missing": asdict(model.missing),
        "std_floor": model.std_floor,
        "params": {
            c: {k: {"shape": list(t.shape), "data": t.data.ravel().tolist()} for k, t in d.items()}
            for c, d in model.params.collections().items()
        },
    }


def model_from_dict(blob: dict[str, Any]) -> Model:
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    params = ModelParams(
        **{
            c: {
                k: Tensor(np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]), requires_grad=True)
                for k, v in blob["params"][c].items()
            }
            for c in ("theta", "phi", "gamma")
        }
    )
    return Model(
        EncoderConfig(**blob["encoder"]),
        DecoderConfig(**blob["decoder"]),
        MissingModelSpec(**blob["missing"]),
        params,
        blob["std_floor"],
    )


def save_checkpoint(path, model: Model, extra: dict[str, Any] | None = None) -> None:
    blob = model_to_dict(model)
    if extra:
        blob["extra"] = extra
    Path(path).write_text(json.dumps(blob))


def load_checkpoint(path) -> tuple[Model, dict[str, Any]]:
    blob = json.loads(Path(path).read_text())
    return model_from_dict(blob), blob.get("extra", {})
