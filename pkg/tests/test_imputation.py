import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from notmiwae import tensor as T
from notmiwae.imputation import (
    DegenerateWeightsError,
    impute,
    mixture_median,
    multiple_impute,
    normalized_weights,
    row_streams,
    sir_indices,
)
from notmiwae.model import DecoderConfig, EncoderConfig, MissingModelSpec, init_model
from notmiwae.objective import log_weights

from oracles import grid_median, toy_model, truncated_normal_mean_above


def truncation_model(sigma=0.6, floor=0.01):
    """x ~ N(0, 1) marginally; x is hidden (almost surely) iff x > 0; q equals the prior on a missing row."""
    w = math.sqrt(1 - sigma**2)
    return toy_model(w=w, c=0.0, sigma=sigma, a=-1e4, b=0.0, q_mu=0.0, q_sd=1.0, floor=floor)


def small_model(seed=0, kind="self_masking"):
    return init_model(EncoderConfig(3, 2, (8,)), DecoderConfig("mlp_gaussian", (8,)), MissingModelSpec(kind),
                      np.random.default_rng(seed))


def test_truncated_normal_snis_mean():
    res = impute(truncation_model(), np.zeros((1, 1)), np.zeros((1, 1)), K=100_000, estimator="snis_mean", seed=0)
    oracle = truncated_normal_mean_above(0.0)
    assert oracle == pytest.approx(math.sqrt(2 / math.pi), abs=1e-15)
    assert abs(res.point_estimates[0, 0] - oracle) < 0.01


def test_truncated_normal_rao_blackwell_with_sharp_decoder():
    # with sigma near zero the decoder mean is the sample itself
    res = impute(truncation_model(sigma=0.01, floor=1e-3), np.zeros((1, 1)), np.zeros((1, 1)), K=100_000, seed=1)
    assert abs(res.point_estimates[0, 0] - math.sqrt(2 / math.pi)) < 0.01


def test_k_one_equals_single_candidate():
    m = small_model()
    x = np.array([[0.3, 0.0, -1.0]])
    mask = np.array([[1.0, 0.0, 1.0]])
    with T.no_grad():
        wm = log_weights(m, x, mask, 1, row_streams(4, [0]))
    plain = impute(m, x, mask, K=1, estimator="snis_mean", seed=4).point_estimates
    rb = impute(m, x, mask, K=1, seed=4).point_estimates
    assert plain[0, 1] == wm.xm.data[0, 0, 1]
    assert rb[0, 1] == wm.obs.mean.data[0, 0, 1]


def test_observed_cells_copied_and_complete_rows_untouched():
    m = small_model()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 3))
    mask = np.ones_like(x)
    mask[[1, 4], [0, 2]] = 0
    res = impute(m, x * mask, mask, K=50, seed=0)
    np.testing.assert_array_equal(res.point_estimates[mask == 1], x[mask == 1])
    assert np.isnan(res.ess[0]) and np.all(np.isfinite(res.ess[[1, 4]]))
    full = impute(m, x, np.ones_like(x), K=50)
    np.testing.assert_array_equal(full.point_estimates, x)


def test_results_independent_of_chunking(monkeypatch):
    import notmiwae.imputation as imp

    m = small_model()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    mask = (rng.uniform(size=x.shape) < 0.6).astype(float)
    a = impute(m, x * mask, mask, K=500, seed=2).point_estimates
    monkeypatch.setattr(imp, "_chunks", lambda rows, K: ([r] for r in reversed(rows)))
    b = impute(m, x * mask, mask, K=500, seed=2).point_estimates
    # same samples; only BLAS summation order may differ with batch shape
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_ess_and_alpha_invariants():
    m = small_model()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    mask = np.array([[0, 1, 1], [1, 0, 0], [0, 0, 1], [1, 1, 0], [0, 1, 0]], dtype=float)
    res = impute(m, x * mask, mask, K=64)
    assert np.all(res.ess >= 1 - 1e-12) and np.all(res.ess <= 64 + 1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
def test_weights_shift_invariant(lw, c):
    a1, e1 = normalized_weights(lw)
    a2, e2 = normalized_weights(lw + c)
    np.testing.assert_allclose(a1, a2, rtol=1e-9, atol=1e-300)
    assert abs(a1.sum() - 1) < 1e-9 and np.all(a1 >= 0)
    assert 1 - 1e-9 <= e1 <= lw.size + 1e-9


def test_equal_weights_give_simple_average():
    alpha, ess = normalized_weights(np.full(4, -3.0))
    np.testing.assert_allclose(alpha, 0.25)
    assert ess == pytest.approx(4.0)


def test_degenerate_weights_rejected():
    with pytest.raises(DegenerateWeightsError):
        normalized_weights(np.array([[-np.inf, -np.inf], [0.0, 1.0]]))
    with pytest.raises(DegenerateWeightsError):
        normalized_weights(np.array([np.nan, 0.0]))


def test_median_single_component_and_symmetric_pair():
    mu = np.array([[0.7]])
    assert mixture_median(np.array([1.0]), mu, np.array([[2.0]]))[0] == pytest.approx(0.7, abs=1e-8)
    got = mixture_median(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([[0.5], [0.5]]))
    assert abs(got[0]) < 1e-8


def test_median_vs_grid_inversion():
    rng = np.random.default_rng(3)
    for _ in range(3):
        alpha = rng.dirichlet(np.ones(5))
        mu, sd = rng.normal(size=5) * 2, rng.uniform(0.2, 1.5, size=5)
        got = mixture_median(alpha, mu[:, None], sd[:, None])[0]
        oracle = grid_median(alpha, mu, sd, lo=mu.min() - 10, hi=mu.max() + 10)
        assert abs(got - oracle) < 1e-5


def test_median_estimator_on_model():
    m = small_model()
    x = np.array([[0.2, 0.0, 0.0]])
    mask = np.array([[1.0, 0.0, 0.0]])
    res = impute(m, x, mask, K=200, estimator="snis_median", seed=5)
    assert np.all(np.isfinite(res.point_estimates))


def test_median_rejected_for_categorical():
    m = init_model(EncoderConfig(2, 1, (4,)), DecoderConfig("categorical", (4,), class_count=3),
                   MissingModelSpec("self_masking"), np.random.default_rng(0))
    with pytest.raises(ValueError):
        impute(m, np.zeros((1, 2)), np.array([[1.0, 0.0]]), K=5, estimator="snis_median")


def test_sir_point_mass_and_uniform_frequencies():
    rng = np.random.default_rng(6)
    alpha = np.zeros(5)
    alpha[0] = 1.0
    assert np.all(sir_indices(alpha, 1000, rng) == 0)
    K = 8
    idx = sir_indices(np.full(K, 1 / K), 100_000, rng)
    freq = np.bincount(idx, minlength=K) / idx.size
    assert np.all(np.abs(freq - 1 / K) < 0.01)


def test_sir_frequencies_match_alpha():
    rng = np.random.default_rng(7)
    alpha = rng.dirichlet(np.ones(6))
    idx = sir_indices(alpha, 100_000, rng)
    assert np.all(np.abs(np.bincount(idx, minlength=6) / idx.size - alpha) < 0.01)


def test_multiple_imputation_mean_matches_snis_mean():
    m = truncation_model()
    draws = multiple_impute(m, np.zeros((1, 1)), np.zeros((1, 1)), K=20_000, draws=10_000, seed=8)
    point = impute(m, np.zeros((1, 1)), np.zeros((1, 1)), K=20_000, estimator="snis_mean", seed=8).point_estimates
    vals = draws[:, 0, 0]
    se = vals.std() / math.sqrt(vals.size)
    assert abs(vals.mean() - point[0, 0]) < 2 * se + 1e-3
    assert draws.shape == (10_000, 1, 1)


def test_multiple_imputation_keeps_observed():
    m = small_model()
    x = np.array([[0.5, 0.0, 1.5], [1.0, 2.0, 3.0]])
    mask = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    out = multiple_impute(m, x, mask, K=20, draws=3)
    np.testing.assert_array_equal(out[:, 1], np.repeat(x[1:2], 3, axis=0))
    np.testing.assert_array_equal(out[:, 0, [0, 2]], np.tile([0.5, 1.5], (3, 1)))


def test_constant_mask_model_matches_mar_imputation():
    m = small_model()
    m.params.phi["a"].data = np.zeros(3)
    m.params.phi["b"].data = np.full(3, 0.4)
    x = np.array([[0.5, 0.0, 1.5], [0.0, 0.0, -1.0]])
    mask = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    a = impute(m, x, mask, K=500, estimator="snis_mean", seed=9).point_estimates
    b = impute(m, x, mask, K=500, estimator="snis_mean", seed=9, objective_kind="miwae").point_estimates
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_invalid_arguments():
    m = small_model()
    with pytest.raises(ValueError):
        impute(m, np.zeros((1, 3)), np.zeros((1, 3)), K=0)
    with pytest.raises(ValueError):
        impute(m, np.zeros((1, 3)), np.zeros((1, 3)), estimator="mode")
    with pytest.raises(ValueError):
        multiple_impute(m, np.zeros((1, 3)), np.zeros((1, 3)), draws=0)
