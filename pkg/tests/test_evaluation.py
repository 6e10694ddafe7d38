import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from notmiwae import evaluation as ev
from notmiwae.missingness import MaskedDataset, make_banknote_like, mcar_mask, simulate
from notmiwae.model import DecoderConfig, EncoderConfig, MissingModelSpec, init_model

from oracles import toy_model


def test_rmse_zero_and_mse_consistency():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 3))
    mask = (rng.uniform(size=x.shape) < 0.5).astype(float)
    assert ev.imputation_rmse(x, x, mask) == 0.0
    imp = x + rng.normal(size=x.shape)
    assert ev.imputation_rmse(imp, x, mask) ** 2 == pytest.approx(ev.imputation_mse(imp, x, mask), abs=1e-9)


def test_constant_zero_imputation_is_rms_of_masked_truth():
    d = simulate(np.random.default_rng(1).normal(size=(500, 4)), "threshold", None)
    miss = d.x_full[d.mask == 0]
    got = ev.imputation_rmse(np.zeros_like(d.x_full), d.x_full, d.mask)
    assert got == pytest.approx(math.sqrt(np.mean(miss**2)), rel=1e-12)


def test_rmse_ignores_observed_positions():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 2))
    mask = np.ones_like(x)
    mask[3, 1] = 0
    imp = x.copy()
    a = ev.imputation_rmse(imp, x, mask)
    imp[mask == 1] = 1e6
    assert ev.imputation_rmse(imp, x, mask) == a


def test_rmse_requires_missing_cells():
    with pytest.raises(ValueError):
        ev.imputation_rmse(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((2, 2)))


def test_mean_impute_baseline_trivial_cases():
    x = np.array([[1.0, 5.0], [3.0, 7.0], [0.0, 9.0]])
    mask = np.array([[1, 1], [1, 1], [0, 1]], dtype=float)
    out = ev.mean_impute_baseline(MaskedDataset(x, mask))
    assert out[2, 0] == 2.0
    np.testing.assert_array_equal(ev.mean_impute_baseline(x, np.ones_like(x)), x)
    with pytest.raises(ValueError):
        ev.mean_impute_baseline(x, np.array([[0, 1], [0, 1], [0, 1]], dtype=float))


def test_mean_imputation_banknote_stand_in():
    d = simulate(make_banknote_like(np.random.default_rng(0)), "threshold", None)
    rmse = ev.imputation_rmse(ev.mean_impute_baseline(d), d.x_full, d.mask)
    assert abs(rmse - 1.73) <= 0.05


def test_mask_accuracy_fixed_model_self_consistent():
    m = init_model(EncoderConfig(3, 1, (4,)), DecoderConfig("linear_ppca"),
                   MissingModelSpec("fixed", fixed_W=-50.0, fixed_b=0.2), np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(1000, 3))
    true_mask = (x <= 0.2).astype(float)
    assert ev.mask_accuracy(m, x, true_mask) == 1.0


def test_constant_logit_accuracy_near_half():
    mask = mcar_mask((2000, 2), 0.5, np.random.default_rng(3))
    assert abs(ev.constant_logit_accuracy(mask) - 0.5) < 0.03
    m = init_model(EncoderConfig(2, 1, (4,)), DecoderConfig("linear_ppca"), MissingModelSpec("self_masking"),
                   np.random.default_rng(0))
    m.params.phi["a"].data = np.zeros(2)
    acc = ev.mask_accuracy(m, np.random.default_rng(4).normal(size=(2000, 2)), mask)
    assert abs(acc - 0.5) < 0.03


def test_eval_report_json(tmp_path):
    r = ev.EvalReport(0.5, 0.25, 0.9, 10, config={"k": 1}, seed=3)
    r.save(tmp_path / "r.json")
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["imputation_rmse"] ** 2 == pytest.approx(back["imputation_mse"], abs=1e-9)
    assert back["seed"] == 3


def _conjugate_marginal(x, w, c, sigma):
    return norm.logpdf(x, loc=c, scale=math.sqrt(w * w + sigma * sigma))


def test_loglik_is_single_sample_is_elbo_estimate():
    m = toy_model()
    x = np.array([[0.1], [-0.4]])
    a = ev.test_loglik_is(m, x, 1, np.random.default_rng(5))
    from notmiwae.objective import evaluate_bound

    b = evaluate_bound(m, x, np.ones_like(x), 1, np.random.default_rng(5), "miwae").mean()
    assert a == pytest.approx(b, abs=1e-14)


def test_loglik_is_matches_closed_form():
    w, c, sigma = 1.2, 0.3, 0.6
    m = toy_model(w=w, c=c, sigma=sigma, q_mu=0.0, q_sd=1.0, q_slope=0.5)
    x = np.array([[0.7], [-1.1], [2.0]])
    est = ev.test_loglik_is(m, x, 10_000, np.random.default_rng(6))
    exact = _conjugate_marginal(x[:, 0], w, c, sigma).mean()
    assert abs(est - exact) < 0.01


def test_loglik_is_non_decreasing_in_L():
    m = toy_model(q_mu=0.0, q_sd=1.3, q_slope=0.1)
    x = np.full((4000, 1), 0.9)
    small = ev.test_loglik_is(m, x, 2, np.random.default_rng(7))
    large = ev.test_loglik_is(m, x, 50, np.random.default_rng(7))
    assert large > small


def test_loglik_is_rejects_L_zero():
    with pytest.raises(ValueError):
        ev.test_loglik_is(toy_model(), np.zeros((1, 1)), 0, np.random.default_rng(0))


def test_refit_encoder_freezes_decoder_and_improves():
    w, c, sigma = 1.2, 0.3, 0.6
    m = toy_model(w=w, c=c, sigma=sigma, q_mu=-2.0, q_sd=0.3, q_slope=0.0)
    x = np.random.default_rng(8).normal(c, math.sqrt(w * w + sigma * sigma), size=(300, 1))
    before = ev.test_loglik_is(m, x, 5, np.random.default_rng(9))
    refit = ev.refit_encoder(m, x, iterations=600, learning_rate=1e-2, seed=1)
    for k, t in m.params.theta.items():
        np.testing.assert_array_equal(refit.params.theta[k].data, t.data)
        assert t.requires_grad
    after = ev.test_loglik_is(refit, x, 5, np.random.default_rng(9))
    assert after > before
    assert m.params.gamma["enc_mu.b"].data[0] == -2.0
