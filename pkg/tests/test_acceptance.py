"""End-to-end acceptance checks, one test per criterion.

Run alone with ``pytest tests/test_acceptance.py`` (about 15 minutes on one
core); a PASS/FAIL line per criterion is printed in the terminal summary.
"""

import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import logsumexp

from notmiwae import experiments as E
from notmiwae import tensor as T
from notmiwae.cli import main as cli_main
from notmiwae.evaluation import imputation_rmse, mean_impute_baseline
from notmiwae.gradcheck import ALL_OPS, check_gradients, random_graph
from notmiwae.imputation import impute, mixture_median, sir_indices
from notmiwae.missingness import load_csv, make_banknote_like, simulate
from notmiwae.objective import log_weights

from oracles import grid_median, toy_loglik_missing, toy_model, truncated_normal_mean_above

SEEDS = range(5)
BANKNOTE_CSV = Path(__file__).resolve().parents[1] / "data" / "banknote.csv"


def _toy_log_weights(K: int, reps: int, seed: int, chunk: int) -> np.ndarray:
    """(reps, K) log-weights of the toy model on a row whose single feature is missing."""
    m = toy_model()
    rng = np.random.default_rng(seed)
    out = []
    for start in range(0, reps, chunk):
        b = min(chunk, reps - start)
        with T.no_grad():
            out.append(log_weights(m, np.zeros((b, 1)), np.zeros((b, 1)), K, rng).log_w.data)
    return np.concatenate(out)


# -- 1 ------------------------------------------------------------------------------------------


def test_c01_autodiff_random_graphs(criterion):
    t0 = time.perf_counter()
    worst, covered, n_graphs = 0.0, set(), 0
    for i in range(max(100, 4 * len(ALL_OPS))):
        rng = np.random.default_rng(10_000 + i)
        leaves, build, plan = random_graph(rng, n_ops=int(rng.integers(2, 7)), force=ALL_OPS[i % len(ALL_OPS)])
        worst = max(worst, max(check_gradients(build, leaves)))
        covered.update(plan)
        n_graphs += 1
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and covered >= set(ALL_OPS) and n_graphs >= 100 and secs < 10
    criterion(1, ok, f"{n_graphs} graphs, {len(covered)}/{len(ALL_OPS)} ops, worst rel err {worst:.2e}, {secs:.1f}s")
    assert ok


# -- 2 ------------------------------------------------------------------------------------------


def test_c02_bound_matches_quadrature(criterion):
    t0 = time.perf_counter()
    ell = toy_loglik_missing(lim=8.0, step=0.005)
    lw = _toy_log_weights(1000, 10_000, seed=2, chunk=200)
    est = logsumexp(lw, axis=1) - math.log(1000)
    mean, se = est.mean(), est.std() / math.sqrt(est.size)
    secs = time.perf_counter() - t0
    ok = abs(mean - ell) < 0.01 and secs < 120
    criterion(2, ok, f"E[L_1000]={mean:.5f} (se {se:.1e}) vs quadrature {ell:.5f}, {secs:.1f}s")
    assert ok


# -- 3 ------------------------------------------------------------------------------------------


def test_c03_monotone_in_K_and_one_over_K_rate(criterion):
    t0 = time.perf_counter()
    ell = toy_loglik_missing(lim=8.0, step=0.005)
    Kmax, R = 256, 20_000
    lw = _toy_log_weights(Kmax, R, seed=3, chunk=500)

    # paired monotonicity: each replicate's first 20 samples give L_1, L_5 and L_20 (block averages)
    first = lw[:, :20]
    L = {K: (logsumexp(first.reshape(R, 20 // K, K), axis=-1) - math.log(K)).mean(axis=1) for K in (1, 5, 20)}
    mono = []
    for lo, hi in ((1, 5), (5, 20)):
        d = L[hi] - L[lo]
        mono.append((d.mean(), d.std() / math.sqrt(R)))
    mono_ok = all(m > -2 * se for m, se in mono)

    # gap(K) = ell - E[L_K]; adding w_bar/p - 1 (mean zero, p = exp(ell) known) removes the shared noise
    Ks = [1, 2, 4, 8, 16, 32, 64, 128, 256]
    gaps, plain = [], []
    for K in Ks:
        LK = logsumexp(lw.reshape(R, Kmax // K, K), axis=-1) - math.log(K)
        gaps.append((ell - LK + np.expm1(LK - ell)).mean())
        plain.append(ell - LK.mean())
    slope = np.polyfit(np.log(Ks), np.log(gaps), 1)[0]
    plain_slope = np.polyfit(np.log(Ks), np.log(np.maximum(plain, 1e-12)), 1)[0]
    secs = time.perf_counter() - t0
    ok = mono_ok and abs(slope + 1) <= 0.2 and secs < 300
    criterion(
        3,
        ok,
        f"E[L5]-E[L1]={mono[0][0]:.4f}, E[L20]-E[L5]={mono[1][0]:.4f}; "
        f"gap slope {slope:.3f} (plain estimator {plain_slope:.3f}), {secs:.1f}s",
    )
    assert ok


# -- 4 ------------------------------------------------------------------------------------------


def test_c04_fig1b_ppca(criterion):
    wins, details, worst_secs = 0, [], 0.0
    for seed in SEEDS:
        t0 = time.perf_counter()
        r = E.fig1b(seed)
        worst_secs = max(worst_secs, time.perf_counter() - t0)
        win = (r["not_miwae"]["mean_distance"] < r["mar"]["mean_distance"]
               and r["not_miwae"]["angle_deg"] < r["mar"]["angle_deg"])
        wins += win
        details.append(f"{r['not_miwae']['mean_distance']:.2f}/{r['mar']['mean_distance']:.2f},"
                       f"{r['not_miwae']['angle_deg']:.1f}/{r['mar']['angle_deg']:.1f}deg")
    ok = wins >= 4 and worst_secs < 300
    criterion(4, ok, f"not-MIWAE closer on {wins}/5 seeds [{'; '.join(details)}], max {worst_secs:.0f}s/seed")
    assert ok


# -- 5 ------------------------------------------------------------------------------------------


def test_c05_mean_imputation_banknote(criterion):
    t0 = time.perf_counter()
    if BANKNOTE_CSV.is_file():
        x, _ = load_csv(BANKNOTE_CSV)
        x, source = x[:, :4], "banknote CSV"
    else:
        x, source = make_banknote_like(np.random.default_rng(0)), "banknote stand-in"
    values = []
    for _ in range(2):
        d = simulate(x, "threshold", None)
        values.append(imputation_rmse(mean_impute_baseline(d), d.x_full, d.mask))
    secs = time.perf_counter() - t0
    ok = values[0] == values[1] and abs(values[0] - 1.73) <= 0.05 and secs < 1
    criterion(5, ok, f"{source}: mean-imputation RMSE {values[0]:.4f} (target 1.73 +/- 0.05), {secs * 1e3:.0f}ms")
    assert ok


# -- 6 and 9 share the trained UCI models ------------------------------------------------------


@pytest.fixture(scope="module")
def uci_runs():
    t0 = time.perf_counter()
    runs = [E.uci_trend(seed) for seed in SEEDS]
    return runs, time.perf_counter() - t0


def test_c06_uci_trend(criterion, uci_runs):
    runs, secs = uci_runs
    good, rows = 0, []
    for r in runs:
        smk, sm = r["self_masking_known"]["rmse"], r["self_masking"]["rmse"]
        agn, mar = r["agnostic"]["rmse"], r["mar"]["rmse"]
        gain = (mar - smk) / mar
        good += smk <= sm <= min(agn, mar) and gain >= 0.2
        rows.append(f"{smk:.3f}<={sm:.3f}<=min({agn:.3f},{mar:.3f}) gain {gain:.0%}")
    ok = good >= 4 and secs < 900
    criterion(6, ok, f"ordering and >=20% gain on {good}/5 seeds [{'; '.join(rows)}], {secs / 60:.1f} min")
    assert ok


def test_c09_mask_accuracy(criterion, uci_runs):
    runs, _ = uci_runs
    known = [r["self_masking_known"]["mask_accuracy"] for r in runs]
    agn = [r["agnostic"]["mask_accuracy"] for r in runs]
    beats = sum(k >= a for k, a in zip(known, agn))
    ok = beats >= 4 and min(known) >= 0.9
    criterion(9, ok, f"known >= agnostic on {beats}/5 seeds; known {min(known):.3f}-{max(known):.3f}, "
                     f"agnostic {min(agn):.3f}-{max(agn):.3f}")
    assert ok


# -- 7 ------------------------------------------------------------------------------------------


def test_c07_clipping(criterion):
    t0 = time.perf_counter()
    r = E.clipping(0)
    secs = time.perf_counter() - t0
    nm, mi = r["not_miwae"], r["miwae"]
    ok = nm["mass_above"] >= 0.10 and mi["mass_above"] < 0.02 and nm["rmse"] < mi["rmse"] and secs < 600
    criterion(7, ok, f"mass above 0.75: not-MIWAE {nm['mass_above']:.1%}, MIWAE {mi['mass_above']:.1%}; "
                     f"RMSE {nm['rmse']:.3f} vs {mi['rmse']:.3f}, {secs:.0f}s")
    assert ok


# -- 8 ------------------------------------------------------------------------------------------


def test_c08_imputation_estimator_oracles(criterion):
    t0 = time.perf_counter()
    # x ~ N(0, 1) marginally and hidden iff x > 0; q equals the prior for a missing row
    sigma = 0.6
    model = toy_model(w=math.sqrt(1 - sigma**2), c=0.0, sigma=sigma, a=-1e4, b=0.0, q_mu=0.0, q_sd=1.0)
    snis = impute(model, np.zeros((1, 1)), np.zeros((1, 1)), K=100_000, estimator="snis_mean", seed=0)
    mean_err = abs(snis.point_estimates[0, 0] - truncated_normal_mean_above(0.0))

    rng = np.random.default_rng(8)
    med_err = 0.0
    for _ in range(5):
        alpha = rng.dirichlet(np.ones(5))
        mu, sd = rng.normal(size=5) * 2, rng.uniform(0.2, 1.5, size=5)
        got = mixture_median(alpha, mu[:, None], sd[:, None])[0]
        med_err = max(med_err, abs(got - grid_median(alpha, mu, sd, lo=mu.min() - 10, hi=mu.max() + 10)))

    alpha = rng.dirichlet(np.ones(8))
    idx = sir_indices(alpha, 100_000, rng)
    sir_err = float(np.max(np.abs(np.bincount(idx, minlength=8) / idx.size - alpha)))
    secs = time.perf_counter() - t0
    ok = mean_err <= 0.01 and med_err < 1e-5 and sir_err <= 0.01 and secs < 60
    criterion(8, ok, f"SNIS mean err {mean_err:.4f}, median err {med_err:.1e}, SIR freq err {sir_err:.4f}, {secs:.1f}s")
    assert ok


# -- 10 -----------------------------------------------------------------------------------------


def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "cfg.json"}


def test_c10_commands_are_deterministic(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "data": {"n": 200},
        "model": {"encoder_hidden": [16], "decoder_hidden": [16]},
        "training": {"iterations": 50, "K": 5},
        "imputation": {"K": 50, "draws": 2},
        "evaluation": {"loglik_L": 10},
        "sweep": {"offsets": [0.0, 0.5], "seeds": [0]},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    common = ["--preset", "ppca", "--config", str(tmp_path / "cfg.json"), "--seed", "7"]
    run, sweep = str(tmp_path / "run"), str(tmp_path / "sweep")
    digests, codes = [], []
    for _ in range(2):
        for verb in ("simulate", "train", "impute", "evaluate"):
            codes.append(cli_main([verb, "--out", run] + common))
        codes.append(cli_main(["sweep", "--out", sweep] + common))
        digests.append(_digest(tmp_path))
    secs = time.perf_counter() - t0
    ok = all(c == 0 for c in codes) and digests[0] == digests[1] and len(digests[0]) > 10
    criterion(10, ok, f"{len(digests[0])} output files byte-identical across re-runs, {secs:.1f}s")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
