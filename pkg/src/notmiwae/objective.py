"""Importance-weighted bounds (not-MIWAE and the MAR MIWAE baseline) and training."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .distributions import (
    CategoricalLogits,
    GaussianParams,
    bernoulli_log_prob,
    categorical_log_prob,
    gaussian_log_prob,
    gumbel_softmax_rsample,
    standard_normal_log_prob,
)
from .model import Model
from .tensor import Tensor

logger = logging.getLogger(__name__)

OBJECTIVE_KINDS = ("not_miwae", "miwae")

Rng = np.random.Generator | Sequence[np.random.Generator]


class NumericalAbort(FloatingPointError):
    """Raised when the bound becomes non-finite during training."""


@dataclass
class WeightMatrix:
    log_w: Tensor  # (batch, K)
    z: Tensor  # (batch, K, d)
    xm: Tensor  # (batch, K, p); entries at observed positions are ignored
    obs: GaussianParams | CategoricalLogits  # p(x | z_k), batch x K x p
    terms: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainConfig:
    K: int = 20
    batch_size: int = 16
    iterations: int = 20_000
    learning_rate: float = 1e-3
    seed: int = 0
    objective_kind: str = "not_miwae"
    record_wall_time: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective_kind {self.objective_kind!r}")


def draw_normal(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal draws; a sequence of generators gives one per leading row."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    if len(rng) != shape[0]:
        raise ValueError("need one generator per row")
    return np.stack([g.standard_normal(shape[1:]) for g in rng])


def _draw_gumbel_source(rng: Rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    raise NotImplementedError("per-row streams are only supported for Gaussian observation models")


def mix_observed_missing(x_obs, mask, x_sampled) -> Tensor:
    """mask * x_obs + (1 - mask) * x_sampled, broadcasting the observed part over K."""
    x_obs = T.constant(x_obs)
    mask = np.asarray(mask, dtype=np.float64)
    x_sampled = T.constant(x_sampled)
    if x_obs.shape != mask.shape or x_sampled.ndim != 3 or x_sampled.shape[::2] != x_obs.shape:
        raise ValueError(f"mix shapes inconsistent: x_obs {x_obs.shape}, mask {mask.shape}, samples {x_sampled.shape}")
    return T.where_mask(mask[:, None, :], T.expand_dims(x_obs, 1), x_sampled)


def _nonfinite_terms(terms: dict[str, np.ndarray]) -> list[str]:
    return [k for k, v in terms.items() if not np.all(np.isfinite(v))]


def log_weights(
    model: Model,
    x_obs,
    mask,
    K: int,
    rng: Rng,
    objective_kind: str = "not_miwae",
) -> WeightMatrix:
    """Log importance weights for K joint samples (z, x^m) per row.

    log w = log p(s | x^o, x^m) + log p(x^o | z) + log p(z) - log q(z | x^o);
    the mask term is dropped for the ``miwae`` objective.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if objective_kind not in OBJECTIVE_KINDS:
        raise ValueError(f"unknown objective_kind {objective_kind!r}")
    x_obs = np.asarray(x_obs.data if isinstance(x_obs, Tensor) else x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    x_obs = x_obs * mask
    B, p = x_obs.shape
    d = model.latent_dim

    q = model.encode(x_obs, mask)
    mu_q, sd_q = T.expand_dims(q.mean, 1), T.expand_dims(q.std, 1)
    z = mu_q + sd_q * draw_normal(rng, (B, K, d))
    log_q = T.sum(gaussian_log_prob(z, GaussianParams(mu_q, sd_q)), axis=-1)
    log_pz = T.sum(standard_normal_log_prob(z), axis=-1)

    obs = model.decode(z)
    mask3 = mask[:, None, :]
    if isinstance(obs, GaussianParams):
        log_px = T.sum(gaussian_log_prob(x_obs[:, None, :], obs) * mask3, axis=-1)
        xm = obs.mean + obs.std * draw_normal(rng, (B, K, p))
    else:
        C = model.decoder.class_count
        observed = x_obs[mask == 1]
        if np.any((observed != np.round(observed)) | (observed < 0) | (observed >= C)):
            raise ValueError(f"categorical data must hold class indices in [0, {C})")
        onehot = np.eye(C)[x_obs.astype(int)][:, None, :, :]
        log_px = T.sum(categorical_log_prob(onehot, obs) * mask3, axis=-1)
        soft = gumbel_softmax_rsample(obs, _draw_gumbel_source(rng))
        xm = T.sum(soft * np.arange(C, dtype=np.float64), axis=-1)

    log_w = log_px + log_pz - log_q
    terms = {"log_p_xo_given_z": log_px.data, "log_p_z": log_pz.data, "log_q_z": log_q.data}
    if objective_kind == "not_miwae":
        x_mixed = mix_observed_missing(x_obs, mask, xm)
        log_ps = T.sum(bernoulli_log_prob(mask3 * np.ones((1, K, 1)), model.mask_logits(x_mixed)), axis=-1)
        log_w = log_w + log_ps
        terms["log_p_s_given_x"] = log_ps.data
    return WeightMatrix(log_w, z, xm, obs, terms)


def bound(weights: WeightMatrix | Tensor) -> Tensor:
    """Batch mean of log (1/K) sum_k w_k."""
    log_w = weights.log_w if isinstance(weights, WeightMatrix) else weights
    K = log_w.shape[-1]
    return T.mean(T.logsumexp(log_w, axis=-1)) - math.log(K)


def bound_values(log_w: np.ndarray) -> np.ndarray:
    """Per-row log-mean-exp of plain arrays (no tape)."""
    with T.no_grad():
        return T.logsumexp(T.Tensor(log_w), axis=-1).data - math.log(log_w.shape[-1])


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v * (1.0 / bc2))
            denom += self.eps
            p.data = p.data - (self.lr / bc1) * m / denom

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = state["t"]
        self.m = [np.asarray(a, dtype=np.float64).reshape(p.shape) for a, p in zip(state["m"], self.params)]
        self.v = [np.asarray(a, dtype=np.float64).reshape(p.shape) for a, p in zip(state["v"], self.params)]


class BatchSampler:
    """Shuffles row indices once per epoch; incomplete tail batches are dropped."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.cursor = 0

    def next(self) -> np.ndarray:
        if self.cursor + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        idx = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return idx


@dataclass
class TrainState:
    iteration: int
    adam: Adam
    rng: np.random.Generator
    sampler: BatchSampler

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "adam": self.adam.state_dict(),
            "rng": self.rng.bit_generator.state,
            "order": self.sampler.order.tolist(),
            "cursor": self.sampler.cursor,
        }

    @classmethod
    def from_dict(cls, blob: dict, model: Model, config: TrainConfig, n: int) -> "TrainState":
        rng = np.random.default_rng()
        rng.bit_generator.state = blob["rng"]
        adam = Adam(model.params.tensors(), lr=config.learning_rate)
        adam.load_state_dict(blob["adam"])
        sampler = BatchSampler.__new__(BatchSampler)
        sampler.n, sampler.batch_size, sampler.rng = n, min(config.batch_size, n), rng
        sampler.order = np.asarray(blob["order"], dtype=np.int64)
        sampler.cursor = blob["cursor"]
        return cls(blob["iteration"], adam, rng, sampler)


@dataclass
class TrainResult:
    model: Model
    trace: list[tuple[int, float, float]]
    state: TrainState


def new_train_state(model: Model, n: int, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    adam = Adam(model.params.tensors(), lr=config.learning_rate)
    return TrainState(0, adam, rng, BatchSampler(n, config.batch_size, rng))


def train_step(model: Model, x_obs: np.ndarray, mask: np.ndarray, config: TrainConfig, state: TrainState) -> float:
    idx = state.sampler.next()
    T.get_tape().reset()
    model.params.zero_grad()
    wm = log_weights(model, x_obs[idx], mask[idx], config.K, state.rng, config.objective_kind)
    b = bound(wm)
    value = b.item()
    if not math.isfinite(value):
        bad = _nonfinite_terms(wm.terms) or ["log_w"]
        raise NumericalAbort(
            f"non-finite bound {value} at iteration {state.iteration + 1}; offending terms: {', '.join(bad)}"
        )
    T.backward(-b)
    state.adam.step()
    state.iteration += 1
    return value


def train(
    model: Model,
    x_obs,
    mask,
    config: TrainConfig,
    state: TrainState | None = None,
    iterations: int | None = None,
    log_every: int = 0,
    callback: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Maximise the bound with Adam for a fixed number of iterations.

    ``state`` resumes an earlier run; ``iterations`` overrides the number of
    steps taken in this call (defaults to what remains of ``config.iterations``).
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    x_obs = x_obs * mask
    if state is None:
        state = new_train_state(model, x_obs.shape[0], config)
    n_steps = config.iterations - state.iteration if iterations is None else iterations
    trace: list[tuple[int, float, float]] = []
    t0 = time.perf_counter()
    for _ in range(max(n_steps, 0)):
        value = train_step(model, x_obs, mask, config, state)
        wall = (time.perf_counter() - t0) * 1e3 if config.record_wall_time else 0.0
        trace.append((state.iteration, value, wall))
        if callback is not None:
            callback(state.iteration, value)
        if log_every and state.iteration % log_every == 0:
            logger.info("iter %d bound %.4f", state.iteration, value)
    return TrainResult(model, trace, state)


def evaluate_bound(model: Model, x_obs, mask, K: int, rng: Rng, objective_kind: str = "not_miwae") -> np.ndarray:
    """Per-row single-draw bound estimates without recording a graph."""
    with T.no_grad():
        wm = log_weights(model, x_obs, mask, K, rng, objective_kind)
    return bound_values(wm.log_w.data)
