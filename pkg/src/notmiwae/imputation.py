"""Single and multiple imputation by self-normalised importance sampling.

The weights are the training importance weights; normalising them per row
gives alpha_k. Each row draws its samples from its own generator seeded by
(seed, row index), so results do not depend on chunking or row order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, softmax

from . import tensor as T
from .distributions import GaussianParams
from .model import Model
from .objective import log_weights

ESTIMATORS = ("snis_mean", "snis_mean_rao_blackwell", "snis_median")
MEDIAN_TOL = 1e-8


class DegenerateWeightsError(FloatingPointError):
    pass


@dataclass
class ImputationResult:
    point_estimates: np.ndarray
    estimator_kind: str
    K_used: int
    ess: np.ndarray


def normalized_weights(log_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """alpha = softmax(log_w) over the last axis, and ESS = 1 / sum(alpha^2)."""
    log_w = np.asarray(log_w, dtype=np.float64)
    bad = np.all(np.isneginf(log_w), axis=-1) | np.any(np.isnan(log_w), axis=-1) | np.any(np.isposinf(log_w), axis=-1)
    if np.any(bad):
        raise DegenerateWeightsError(f"{int(bad.sum())} row(s) have degenerate importance weights")
    alpha = softmax(log_w, axis=-1)
    return alpha, 1.0 / np.sum(alpha * alpha, axis=-1)


def row_streams(seed: int, rows) -> list[np.random.Generator]:
    return [np.random.default_rng([int(seed), int(r)]) for r in rows]


@dataclass
class _Draws:
    alpha: np.ndarray  # (B, K)
    ess: np.ndarray  # (B,)
    xm: np.ndarray  # (B, K, p) sampled completions
    mean: np.ndarray  # (B, K, p) E[x | z_k]
    std: np.ndarray | None  # (B, K, p) for Gaussian observation models


def _draw(model: Model, x_obs, mask, K: int, rngs, objective_kind: str) -> _Draws:
    with T.no_grad():
        wm = log_weights(model, x_obs, mask, K, rngs, objective_kind)
    alpha, ess = normalized_weights(wm.log_w.data)
    obs = wm.obs
    if isinstance(obs, GaussianParams):
        mean = obs.mean.data
        std = np.broadcast_to(obs.std.data, mean.shape)
    else:
        probs = softmax(obs.logits.data, axis=-1)
        mean = probs @ np.arange(probs.shape[-1], dtype=np.float64)
        std = None
    return _Draws(alpha, ess, wm.xm.data, mean, std)


def mixture_median(alpha: np.ndarray, mu: np.ndarray, sigma: np.ndarray, tol: float = MEDIAN_TOL) -> np.ndarray:
    """Solve sum_k alpha_k Phi((x - mu_k) / sigma_k) = 1/2 by bisection.

    ``alpha`` has shape (..., K); ``mu`` and ``sigma`` have shape (..., K, p).
    Returns shape (..., p).
    """
    a = alpha[..., :, None]
    smax = sigma.max(axis=-2)
    lo = mu.min(axis=-2) - 6.0 * smax
    hi = mu.max(axis=-2) + 6.0 * smax

    def cdf(x):
        return np.sum(a * ndtr((x[..., None, :] - mu) / sigma), axis=-2)

    if np.any(cdf(lo) > 0.5) or np.any(cdf(hi) < 0.5):
        raise ArithmeticError("median bracket does not contain the root")
    n_iter = int(np.ceil(np.log2(max(np.max(hi - lo), tol) / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < 0.5
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sir_indices(alpha: np.ndarray, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Resample candidate indices with probabilities alpha (with replacement)."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    cdf = np.cumsum(alpha)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.uniform(size=draws), side="right")


def _chunks(rows: np.ndarray, K: int):
    size = max(1, 200_000 // max(K, 1))
    for start in range(0, len(rows), size):
        yield rows[start : start + size]


def impute(
    model: Model,
    x_obs: np.ndarray,
    mask: np.ndarray,
    K: int = 10_000,
    estimator: str = "snis_mean_rao_blackwell",
    seed: int = 0,
    objective_kind: str = "not_miwae",
) -> ImputationResult:
    """Fill missing cells with an SNIS point estimate; observed cells are copied.

    ``objective_kind="miwae"`` drops the mask term from the weights (MAR imputation).
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if K < 1:
        raise ValueError("K must be >= 1")
    if estimator == "snis_median" and model.decoder.kind == "categorical":
        raise ValueError("median imputation needs a Gaussian observation model")
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    out = np.where(mask == 1, x_obs, 0.0)
    ess = np.full(x_obs.shape[0], np.nan)
    rows = np.flatnonzero((mask == 0).any(axis=1))
    for chunk in _chunks(rows, K):
        dr = _draw(model, x_obs[chunk], mask[chunk], K, row_streams(seed, chunk), objective_kind)
        if estimator == "snis_mean":
            est = np.einsum("bk,bkp->bp", dr.alpha, dr.xm)
        elif estimator == "snis_mean_rao_blackwell":
            est = np.einsum("bk,bkp->bp", dr.alpha, dr.mean)
        else:
            est = mixture_median(dr.alpha, dr.mean, dr.std)
        m = mask[chunk]
        out[chunk] = np.where(m == 1, x_obs[chunk], est)
        ess[chunk] = dr.ess
    return ImputationResult(out, estimator, K, ess)


def multiple_impute(
    model: Model,
    x_obs: np.ndarray,
    mask: np.ndarray,
    K: int = 10_000,
    draws: int = 5,
    seed: int = 0,
    objective_kind: str = "not_miwae",
) -> np.ndarray:
    """Sampling importance resampling: ``draws`` completed copies of the data, shape (draws, n, p)."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    base = np.where(mask == 1, x_obs, 0.0)
    out = np.repeat(base[None], draws, axis=0)
    rows = np.flatnonzero((mask == 0).any(axis=1))
    for chunk in _chunks(rows, K):
        rngs = row_streams(seed, chunk)
        dr = _draw(model, x_obs[chunk], mask[chunk], K, rngs, objective_kind)
        for b, r in enumerate(chunk):
            idx = sir_indices(dr.alpha[b], draws, rngs[b])
            out[:, r] = np.where(mask[r] == 1, x_obs[r], dr.xm[b, idx])
    return out
