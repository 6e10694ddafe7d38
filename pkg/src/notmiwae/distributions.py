"""Reparameterizable distributions and their log-densities.

Gaussian and Bernoulli log-densities are single tape nodes with analytic
gradients; they dominate the cost of a training step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, ndtr, softmax

from . import tensor as T
from .tensor import Tensor, constant

LOG_2PI = math.log(2.0 * math.pi)
GUMBEL_EPS = 1e-12


@dataclass
class GaussianParams:
    mean: Tensor
    std: Tensor


@dataclass
class BernoulliLogits:
    logits: Tensor

    @property
    def probs(self) -> np.ndarray:
        return expit(self.logits.data)


@dataclass
class CategoricalLogits:
    """Logits with classes along the last axis."""

    logits: Tensor
    temperature: float = 0.5


def gaussian_log_prob(x, p: GaussianParams) -> Tensor:
    """Elementwise log N(x | mean, std**2)."""
    x, mu, sd = constant(x), constant(p.mean), constant(p.std)
    if np.any(sd.data <= 0):
        raise ValueError("gaussian std must be strictly positive")
    z = (x.data - mu.data) / sd.data
    out = -0.5 * LOG_2PI - np.log(sd.data) - 0.5 * z * z
    shapes = (x.shape, mu.shape, sd.shape)

    def bw(g):
        gz = g * z / sd.data
        return (
            T._unbroadcast(-gz, shapes[0]),
            T._unbroadcast(gz, shapes[1]),
            T._unbroadcast(g * (z * z - 1.0) / sd.data, shapes[2]),
        )

    return T._result(out, (x, mu, sd), bw)


def standard_normal_log_prob(x) -> Tensor:
    x = constant(x)
    xd = x.data
    return T._result(-0.5 * LOG_2PI - 0.5 * xd * xd, (x,), lambda g: (-g * xd,))


def gaussian_rsample(p: GaussianParams, rng: np.random.Generator, shape=None) -> Tensor:
    """mean + std * eps with eps ~ N(0, I); gradients reach mean and std only."""
    shape = np.broadcast_shapes(p.mean.shape, p.std.shape) if shape is None else shape
    eps = rng.standard_normal(shape)
    return p.mean + p.std * eps


def gaussian_cdf(x, mean=0.0, std=1.0):
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError("gaussian std must be strictly positive")
    return ndtr((np.asarray(x, dtype=np.float64) - mean) / std)


def bernoulli_log_prob(s, p: BernoulliLogits) -> Tensor:
    """log Bern(s | sigmoid(logits)) computed from logits as s*l - softplus(l)."""
    s = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64)
    if not np.all((s == 0.0) | (s == 1.0)):
        raise ValueError("bernoulli observations must be 0 or 1")
    logits = constant(p.logits)
    ld = logits.data
    out = s * ld - np.logaddexp(0.0, ld)
    shape = logits.shape
    return T._result(out, (logits,), lambda g: (T._unbroadcast(g * (s - expit(ld)), shape),))


def gumbel_softmax_rsample(p: CategoricalLogits, rng: np.random.Generator) -> Tensor:
    """Relaxed one-hot sample softmax((logits + G) / temperature)."""
    if p.temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = constant(p.logits)
    u = rng.uniform(GUMBEL_EPS, 1.0 - GUMBEL_EPS, size=logits.shape)
    g = -np.log(-np.log(u))
    tau = p.temperature
    y = softmax((logits.data + g) / tau, axis=-1)

    def bw(gy):
        inner = gy - np.sum(gy * y, axis=-1, keepdims=True)
        return (y * inner / tau,)

    return T._result(y, (logits,), bw)


def categorical_log_prob(onehot, p: CategoricalLogits) -> Tensor:
    """sum_c onehot_c * log softmax(logits)_c over the class axis.

    ``onehot`` may be a relaxed (soft) sample.
    """
    y, logits = constant(onehot), constant(p.logits)
    logp = log_softmax(logits.data, axis=-1)
    out = np.sum(y.data * logp, axis=-1)
    ys, ls = y.shape, logits.shape

    def bw(g):
        g = g[..., None]
        yd = np.broadcast_to(y.data, np.broadcast_shapes(ys, ls))
        gl = g * (yd - np.sum(yd, axis=-1, keepdims=True) * np.exp(logp))
        return T._unbroadcast(g * logp, ys), T._unbroadcast(gl, ls)

    return T._result(out, (y, logits), bw)
