"""Datasets, standardization and missingness-mechanism simulators.

Masks use 1 for an observed cell and 0 for a missing one.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .tensor import Tensor


@dataclass(frozen=True)
class MaskedDataset:
    x_obs: np.ndarray  # missing cells hold 0
    mask: np.ndarray
    x_full: np.ndarray | None = None
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None
    standardized: bool = False

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "x_obs", np.where(mask == 1, np.asarray(self.x_obs, dtype=np.float64), 0.0))
        if self.x_full is not None and np.asarray(self.x_full).shape != mask.shape:
            raise ValueError("x_full and mask shapes differ")

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def p(self) -> int:
        return self.mask.shape[1]

    @property
    def missing_rate(self) -> float:
        return float(1.0 - self.mask.mean())

    def with_mask(self, mask: np.ndarray) -> "MaskedDataset":
        if self.x_full is None:
            raise ValueError("re-masking needs the complete data")
        return replace(self, x_obs=self.x_full, mask=mask)

    def unstandardize(self, x: np.ndarray) -> np.ndarray:
        if not self.standardized:
            return np.asarray(x)
        return np.asarray(x) * self.feature_stds + self.feature_means


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def parse_csv(text: str, header: bool = False) -> tuple[np.ndarray, np.ndarray, list[str] | None]:
    """Parse numeric CSV text; empty cells are missing. Returns (values, mask, names)."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    names = None
    if header and rows:
        names, rows = rows[0], rows[1:]
    if not rows:
        raise ValueError("CSV contains no data rows")
    width = len(rows[0])
    values = np.zeros((len(rows), width))
    mask = np.ones((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"ragged CSV: row {i + 1} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                mask[i, j] = 0.0
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ValueError(f"non-numeric cell {cell!r} at row {i + 1}, column {j + 1}") from None
    return values, mask, names


def load_csv(path, header: bool = False) -> tuple[np.ndarray, np.ndarray]:
    values, mask, _ = parse_csv(Path(path).read_text(), header=header)
    return values, mask


def format_csv(values: np.ndarray, mask: np.ndarray | None = None, header: Sequence[str] | None = None) -> str:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for i, row in enumerate(values):
        w.writerow(["" if mask is not None and mask[i, j] == 0 else repr(float(v)) for j, v in enumerate(row)])
    return out.getvalue()


def write_csv(path, values: np.ndarray, mask: np.ndarray | None = None, header: Sequence[str] | None = None) -> None:
    Path(path).write_text(format_csv(values, mask, header))


def write_mask_csv(path, mask: np.ndarray) -> None:
    lines = [",".join(str(int(v)) for v in row) for row in np.asarray(mask)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


def feature_stats(x: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if mask is None:
        mask = np.ones_like(x)
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("a feature has no observed values")
    means = (x * mask).sum(axis=0) / counts
    stds = np.sqrt((((x - means) * mask) ** 2).sum(axis=0) / counts)
    if np.any(stds <= 0):
        raise ValueError(f"constant feature(s) at columns {np.flatnonzero(stds <= 0).tolist()}")
    return means, stds


def standardize(data: MaskedDataset, stats_source: str = "complete_data") -> MaskedDataset:
    """Standardize every feature; ``complete_data`` needs ground truth, ``observed_only`` does not."""
    if stats_source == "complete_data":
        if data.x_full is None:
            raise ValueError("complete_data statistics need x_full")
        means, stds = feature_stats(data.x_full)
    elif stats_source == "observed_only":
        means, stds = feature_stats(data.x_obs, data.mask)
    else:
        raise ValueError(f"unknown stats_source {stats_source!r}")
    x_full = None if data.x_full is None else (data.x_full - means) / stds
    return MaskedDataset(
        x_obs=(data.x_obs - means) / stds,
        mask=data.mask,
        x_full=x_full,
        feature_means=means,
        feature_stds=stds,
        standardized=True,
    )


def zero_impute(data: MaskedDataset | Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Encoder input: observed values with 0 at missing cells."""
    if isinstance(data, MaskedDataset):
        return Tensor(data.x_obs * data.mask)
    return data * np.asarray(mask, dtype=np.float64)


# ---------------------------------------------------------------------------
# mechanisms
# ---------------------------------------------------------------------------


def resolve_features(affected, p: int) -> np.ndarray:
    """``"first_half"`` -> first ceil(p/2) columns, ``"all"`` -> every column, else an index list."""
    if affected is None or affected == "first_half":
        return np.arange(math.ceil(p / 2))
    if affected == "all":
        return np.arange(p)
    idx = np.asarray(list(affected), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= p):
        raise ValueError(f"affected feature indices out of range for p={p}")
    return idx


def mnar_threshold_mask(
    x_full: np.ndarray,
    affected_features="first_half",
    offset: float = 0.0,
    rng: np.random.Generator | None = None,
    means: np.ndarray | None = None,
    stds: np.ndarray | None = None,
) -> np.ndarray:
    """Self-masking: cells above mean + offset * std in affected features go missing.

    Deterministic; ``rng`` is accepted for a uniform mechanism signature.
    """
    x = np.asarray(x_full, dtype=np.float64)
    if means is None or stds is None:
        means, stds = x.mean(axis=0), x.std(axis=0)
    cols = resolve_features(affected_features, x.shape[1])
    mask = np.ones_like(x)
    cutoff = means[cols] + offset * stds[cols]
    mask[:, cols] = (x[:, cols] <= cutoff).astype(np.float64)
    return mask


def mnar_logistic_mask(
    x_full: np.ndarray, W: float = -50.0, b: float = 0.75, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Bernoulli mask with Pr(observed | x) = sigmoid(W * (x - b)) per cell."""
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x_full, dtype=np.float64)
    prob = expit(W * (x - b))
    return (rng.uniform(size=x.shape) < prob).astype(np.float64)


def mcar_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Each cell is missing independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"missing rate must lie in [0, 1], got {rate}")
    return (rng.uniform(size=shape) >= rate).astype(np.float64)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def make_gaussian_2d(n: int, mean, cov, rng: np.random.Generator) -> np.ndarray:
    """n draws from N(mean, cov) via the Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T):
        raise ValueError("covariance must be a symmetric matrix matching the mean")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    return mean + rng.standard_normal((n, mean.size)) @ L.T


# Pearson correlations of the four UCI banknote-authentication features
# (variance, skewness, curtosis, entropy of wavelet-transformed images).
BANKNOTE_CORR = np.array(
    [
        [1.000, 0.264, -0.381, 0.277],
        [0.264, 1.000, -0.787, -0.526],
        [-0.381, -0.787, 1.000, 0.319],
        [0.277, -0.526, 0.319, 1.000],
    ]
)
BANKNOTE_N = 1372


def make_banknote_like(rng: np.random.Generator, n: int = BANKNOTE_N) -> np.ndarray:
    """Stand-in for the banknote data: correlated 4-D Gaussian, banknote correlation matrix."""
    return make_gaussian_2d(n, np.zeros(4), BANKNOTE_CORR, rng)


def make_lowrank_gaussian(
    rng: np.random.Generator, n: int, p: int, rank: int, noise: float = 0.3
) -> np.ndarray:
    """x = z A + noise with z ~ N(0, I_rank)."""
    A = rng.standard_normal((rank, p))
    return rng.standard_normal((n, rank)) @ A + noise * rng.standard_normal((n, p))


def make_clipping_data(
    rng: np.random.Generator, n: int = 2000, p: int = 8, rank: int = 2, noise: float = 0.7, scale: float = 0.8
) -> np.ndarray:
    """Intensity-like values in [0, 1]: sigmoid of a low-rank field plus per-cell noise.

    The per-cell noise keeps a clipped value from being predictable from its
    row's other features alone.
    """
    A = rng.standard_normal((rank, p)) * scale
    z = rng.standard_normal((n, rank))
    return expit(z @ A + noise * rng.standard_normal((n, p)))


def simulate(
    x_full: np.ndarray,
    mechanism: str,
    rng: np.random.Generator,
    *,
    offset: float = 0.0,
    W: float = -50.0,
    b: float = 0.75,
    rate: float = 0.0,
    affected_features="first_half",
    standardize_first: bool = True,
) -> MaskedDataset:
    """Standardize (optionally) with complete-data statistics, then apply a mechanism."""
    data = MaskedDataset(x_obs=x_full, mask=np.ones_like(x_full), x_full=x_full)
    if standardize_first:
        data = standardize(data, "complete_data")
    x = data.x_full
    if mechanism == "threshold":
        mask = mnar_threshold_mask(x, affected_features, offset)
    elif mechanism == "logistic":
        mask = mnar_logistic_mask(x, W, b, rng)
    elif mechanism == "mcar":
        mask = mcar_mask(x.shape, rate, rng)
    elif mechanism == "none":
        mask = np.ones_like(x)
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    return data.with_mask(mask)
