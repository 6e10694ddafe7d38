"""Imputation error, mask-prediction accuracy and importance-sampled test log-likelihood."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .missingness import MaskedDataset
from .model import Model
from .objective import Adam, BatchSampler, bound, bound_values, log_weights


@dataclass
class EvalReport:
    imputation_rmse: float
    imputation_mse: float
    mask_accuracy: float | None
    n_missing_cells: int
    test_loglik: float | None = None
    mean_baseline_rmse: float | None = None
    config: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def imputation_mse(imputed, truth, mask) -> float:
    imputed, truth, mask = (np.asarray(a, dtype=np.float64) for a in (imputed, truth, mask))
    if imputed.shape != truth.shape or truth.shape != mask.shape:
        raise ValueError("imputed, truth and mask must share a shape")
    miss = mask == 0
    if not miss.any():
        raise ValueError("no missing cells to score")
    return float(np.mean((imputed[miss] - truth[miss]) ** 2))


def imputation_rmse(imputed, truth, mask) -> float:
    """Root mean squared error over the missing cells only."""
    return math.sqrt(imputation_mse(imputed, truth, mask))


def mean_impute_baseline(data: MaskedDataset | np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if isinstance(data, MaskedDataset):
        x, mask = data.x_obs, data.mask
    else:
        x = np.asarray(data, dtype=np.float64)
    if np.any(mask.sum(axis=0) == 0):
        raise ValueError("a feature is entirely missing; no observed mean")
    means, _ = _observed_means(x, mask)
    return np.where(mask == 1, x, means)


def _observed_means(x, mask):
    counts = mask.sum(axis=0)
    means = (x * mask).sum(axis=0) / counts
    return means, counts


def mask_accuracy(model: Model, x_full, true_mask, features=None) -> float:
    """Fraction of cells whose mask is predicted correctly from complete data.

    A cell is predicted observed when its logit is >= 0. ``features`` limits
    the average to a subset of columns (e.g. the ones a mechanism touched).
    """
    x_full = np.asarray(x_full, dtype=np.float64)
    true_mask = np.asarray(true_mask, dtype=np.float64)
    with T.no_grad():
        if model.missing.kind == "fixed" or model.params.phi:
            logits = model.mask_logits(x_full[:, None, :]).logits.data[:, 0, :]
        else:
            logits = np.zeros_like(x_full)
    pred = (logits >= 0).astype(np.float64)
    agree = pred == true_mask
    if features is not None:
        agree = agree[:, np.asarray(features, dtype=int)]
    return float(agree.mean())


def constant_logit_accuracy(true_mask, features=None) -> float:
    """Accuracy of the best constant predictor (majority class per evaluated cell set)."""
    m = np.asarray(true_mask, dtype=np.float64)
    if features is not None:
        m = m[:, np.asarray(features, dtype=int)]
    rate = m.mean()
    return float(max(rate, 1.0 - rate))


def refit_encoder(
    model: Model,
    x: np.ndarray,
    iterations: int,
    K: int = 20,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    seed: int = 0,
) -> Model:
    """Retrain a copy of the encoder on fully observed rows with the decoder frozen."""
    x = np.asarray(x, dtype=np.float64)
    params = model.params.copy()
    for t in params.theta.values():
        t.requires_grad = False
    for t in params.phi.values():
        t.requires_grad = False
    refit = Model(model.encoder, model.decoder, model.missing, params, model.std_floor)
    rng = np.random.default_rng(seed)
    gamma = list(params.gamma.values())
    adam = Adam(gamma, lr=learning_rate)
    sampler = BatchSampler(x.shape[0], batch_size, rng)
    ones = np.ones_like(x)
    for _ in range(iterations):
        idx = sampler.next()
        T.get_tape().reset()
        for t in gamma:
            t.grad = None
        b = bound(log_weights(refit, x[idx], ones[idx], K, rng, "miwae"))
        T.backward(-b)
        adam.step()
    for t in params.theta.values():
        t.requires_grad = True
    for t in params.phi.values():
        t.requires_grad = True
    return refit


def test_loglik_is(
    model: Model,
    x_test,
    L: int,
    rng: np.random.Generator,
    refit_iterations: int = 0,
    refit_seed: int = 0,
) -> float:
    """Average over rows of log (1/L) sum_l p(x|z_l) p(z_l) / q(z_l|x), z_l ~ q(z|x).

    The encoder is optionally refit on ``x_test`` first with the decoder frozen.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    x = np.asarray(x_test, dtype=np.float64)
    if refit_iterations > 0:
        model = refit_encoder(model, x, refit_iterations, seed=refit_seed)
    ones = np.ones_like(x)
    size = max(1, 200_000 // L)
    vals = []
    for start in range(0, x.shape[0], size):
        sl = slice(start, start + size)
        with T.no_grad():
            wm = log_weights(model, x[sl], ones[sl], L, rng, "miwae")
        vals.append(bound_values(wm.log_w.data))
    return float(np.mean(np.concatenate(vals)))
