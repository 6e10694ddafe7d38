"""Command-line runner: simulate, train, impute, evaluate, sweep.

Every command reads its inputs from and writes its outputs to one run
directory. Values on disk are in the model's working (standardized) units;
``stats.json`` holds the means and stds needed to map back.

Only ``simulate`` writes ground truth and only ``evaluate`` reads it. The
train and impute commands go through :meth:`RunDir.inputs`, which never
touches ``truth.csv``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, merge, preset
from .evaluation import EvalReport, imputation_rmse, mask_accuracy, mean_impute_baseline
from .evaluation import test_loglik_is as loglik_is
from .imputation import impute, multiple_impute
from .missingness import (
    MaskedDataset,
    load_csv,
    make_banknote_like,
    make_clipping_data,
    make_gaussian_2d,
    make_lowrank_gaussian,
    parse_csv,
    resolve_features,
    simulate,
    standardize,
)
from .model import init_model, load_checkpoint, save_checkpoint
from .objective import NumericalAbort, TrainState, train

log = logging.getLogger("notmiwae")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SWEEP_COLUMNS = ["dataset", "mechanism", "offset", "model_kind", "missing_model_kind", "seed", "rmse", "mask_acc", "loglik"]


class ArtifactError(OSError):
    """A required run artifact is missing or unreadable."""


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _csv_text(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def _matrix_rows(x, mask=None):
    for i, row in enumerate(x):
        yield ["" if mask is not None and mask[i, j] == 0 else _fmt(v) for j, v in enumerate(row)]


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def write(self, name: str, text: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.path(name).write_text(text)

    def _require(self, name: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise ArtifactError(f"missing artifact {p}")
        return p

    def _read_matrix(self, name: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
        try:
            values, mask, names = parse_csv(self._require(name).read_text(), header=True)
        except ValueError as e:
            raise ArtifactError(f"{self.path(name)}: {e}") from None
        return values, mask, names

    def inputs(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Observed data and mask; the only data access available to training and imputation."""
        return self._read_matrix("data.csv")

    def truth(self) -> np.ndarray:
        values, mask, _ = self._read_matrix("truth.csv")
        if np.any(mask == 0):
            raise ArtifactError("truth.csv has empty cells")
        return values

    def imputed(self) -> np.ndarray:
        return self._read_matrix("imputed.csv")[0]

    def stats(self) -> dict:
        return json.loads(self._require("stats.json").read_text())

    def checkpoint(self):
        path = self._require("checkpoint.json")
        try:
            return load_checkpoint(path)
        except (ValueError, KeyError, TypeError) as e:
            raise ArtifactError(f"{path}: unreadable checkpoint ({e})") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _synthetic(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    d = cfg.data
    if d.synthetic == "gaussian_2d":
        return make_gaussian_2d(d.n, d.mean, d.cov, rng)
    if d.synthetic == "banknote_like":
        return make_banknote_like(rng, d.n)
    if d.synthetic == "lowrank_gaussian":
        return make_lowrank_gaussian(rng, d.n, d.p, d.rank, **({} if d.noise is None else {"noise": d.noise}))
    return make_clipping_data(rng, d.n, d.p, d.rank, **({} if d.noise is None else {"noise": d.noise}))


def cmd_simulate(cfg: ExperimentConfig) -> RunDir:
    run = RunDir(cfg.out)
    rng = np.random.default_rng(cfg.seed)
    m = cfg.mechanism
    real_missing = False
    if cfg.data.source == "csv":
        try:
            x, obs = load_csv(cfg.data.path, header=cfg.data.header)
        except FileNotFoundError:
            raise ArtifactError(f"input CSV not found: {cfg.data.path}") from None
        real_missing = bool(np.any(obs == 0))
    else:
        x = _synthetic(cfg, rng)
    if real_missing:
        # incomplete input: keep its own mask, standardize with observed statistics, no ground truth
        data = MaskedDataset(x, obs)
        if cfg.data.standardize:
            data = standardize(data, "observed_only")
        truth = None
    else:
        data = simulate(
            x, m.kind, rng, offset=m.offset, W=m.W, b=m.b, rate=m.rate,
            affected_features=m.affected_features, standardize_first=cfg.data.standardize,
        )
        truth = data.x_full
    names = [f"x{j}" for j in range(data.p)]
    run.write("data.csv", _csv_text(names, _matrix_rows(data.x_obs, data.mask)))
    run.write("mask.csv", _csv_text(names, data.mask.astype(int).tolist()))
    if truth is not None:
        run.write("truth.csv", _csv_text(names, _matrix_rows(truth)))
    stats = {
        "dataset": cfg.data.name,
        "means": None if data.feature_means is None else data.feature_means.tolist(),
        "stds": None if data.feature_stds is None else data.feature_stds.tolist(),
        "standardized": data.standardized,
        "stats_source": "observed_only" if real_missing else "complete_data",
        "mechanism": m.descriptor() if not real_missing else {"kind": "given"},
        "affected_features": resolve_features(m.affected_features, data.p).tolist(),
        "missing_rate": data.missing_rate,
        "n": data.n,
        "p": data.p,
        "seed": cfg.seed,
    }
    run.write("stats.json", _dump_json(stats))
    run.write("config.json", cfg.to_json())
    log.info("simulated %d x %d, missing rate %.3f -> %s", data.n, data.p, data.missing_rate, run.root)
    return run


def _trace_rows(trace):
    return [[it, _fmt(b), _fmt(w)] for it, b, w in trace]


def cmd_train(cfg: ExperimentConfig, resume: bool = False) -> RunDir:
    run = RunDir(cfg.out)
    x, mask, _ = run.inputs()
    tcfg = cfg.training.build(cfg.seed)
    if resume:
        model, extra = run.checkpoint()
        if extra.get("objective_kind") != tcfg.objective_kind:
            raise ConfigError("resume: objective kind differs from the checkpoint")
        state = TrainState.from_dict(extra["train_state"], model, tcfg, x.shape[0])
        prev = run.path("trace.csv").read_text() if run.path("trace.csv").is_file() else None
    else:
        enc, dec, spec = cfg.model.build(x.shape[1])
        model = init_model(enc, dec, spec, np.random.default_rng([cfg.seed, 1]), cfg.model.std_floor)
        state, prev = None, None
    res = train(model, x, mask, tcfg, state=state, log_every=cfg.training.log_every)
    extra = {"objective_kind": tcfg.objective_kind, "train_state": res.state.to_dict(), "seed": cfg.seed}
    run.root.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run.path("checkpoint.json"), model, extra)
    rows = _trace_rows(res.trace)
    text = _csv_text(["iteration", "bound", "wall_ms"], rows)
    if prev is not None:
        text = prev + text.split("\n", 1)[1]
    run.write("trace.csv", text)
    run.write("train_config.json", cfg.to_json())
    if res.trace:
        log.info("trained to iteration %d, last bound %.4f", res.state.iteration, res.trace[-1][1])
    return run


def _histogram(values: np.ndarray, bins: int) -> str:
    if values.size == 0:
        return _csv_text(["bin_left", "bin_right", "count"], [])
    counts, edges = np.histogram(values, bins=bins)
    rows = [[_fmt(edges[i]), _fmt(edges[i + 1]), int(c)] for i, c in enumerate(counts)]
    return _csv_text(["bin_left", "bin_right", "count"], rows)


def cmd_impute(cfg: ExperimentConfig) -> RunDir:
    run = RunDir(cfg.out)
    x, mask, names = run.inputs()
    model, extra = run.checkpoint()
    objective = extra.get("objective_kind", "not_miwae")
    ic = cfg.imputation
    try:
        res = impute(model, x, mask, K=ic.K, estimator=ic.estimator, seed=cfg.seed, objective_kind=objective)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    run.write("imputed.csv", _csv_text(names, _matrix_rows(res.point_estimates)))
    run.write("histogram.csv", _histogram(res.point_estimates[mask == 0], ic.histogram_bins))
    if ic.draws > 0:
        draws = multiple_impute(model, x, mask, K=ic.K, draws=ic.draws, seed=cfg.seed, objective_kind=objective)
        for k, sample in enumerate(draws):
            rows = [[k] + r for r in _matrix_rows(sample)]
            run.write(f"imputed_draw_{k}.csv", _csv_text(["draw"] + names, rows))
    log.info("imputed %d missing cells with %s (K=%d)", int((mask == 0).sum()), ic.estimator, ic.K)
    return run


def _evaluate(cfg: ExperimentConfig, run: RunDir) -> EvalReport:
    x, mask, _ = run.inputs()
    truth = run.truth()
    imputed = run.imputed()
    model, extra = run.checkpoint()
    stats = run.stats()
    affected = stats.get("affected_features") if cfg.evaluation.mask_features == "affected" else None
    rmse = imputation_rmse(imputed, truth, mask)
    acc = None
    if extra.get("objective_kind") == "not_miwae":
        acc = mask_accuracy(model, truth, mask, affected)
    loglik = None
    if cfg.evaluation.loglik_L > 0:
        loglik = loglik_is(model, truth, cfg.evaluation.loglik_L, np.random.default_rng([cfg.seed, 2]),
                           refit_iterations=cfg.evaluation.refit_iterations, refit_seed=cfg.seed)
    baseline = imputation_rmse(mean_impute_baseline(x, mask), truth, mask)
    return EvalReport(
        imputation_rmse=rmse,
        imputation_mse=rmse * rmse,
        mask_accuracy=acc,
        n_missing_cells=int((mask == 0).sum()),
        test_loglik=loglik,
        mean_baseline_rmse=baseline,
        config=cfg.to_dict(),
        seed=cfg.seed,
    )


def cmd_evaluate(cfg: ExperimentConfig) -> EvalReport:
    run = RunDir(cfg.out)
    report = _evaluate(cfg, run)
    run.write("report.json", report.to_json() + "\n")
    log.info("rmse %.4f (mean baseline %.4f)", report.imputation_rmse, report.mean_baseline_rmse)
    return report


def _sweep_one(args) -> list:
    cfg, offset, variant, seed = args
    sub = Path(cfg.out) / f"offset{offset}_{variant.objective_kind}_{variant.missing_kind}_seed{seed}"
    run_cfg = replace(
        cfg,
        out=str(sub),
        seed=seed,
        mechanism=replace(cfg.mechanism, offset=offset),
        model=replace(cfg.model, missing_kind=variant.missing_kind),
        training=replace(cfg.training, objective_kind=variant.objective_kind),
    )
    cmd_simulate(run_cfg)
    cmd_train(run_cfg)
    cmd_impute(run_cfg)
    rep = cmd_evaluate(run_cfg)
    return [
        cfg.data.name, cfg.mechanism.kind, _fmt(offset), variant.objective_kind, variant.missing_kind, seed,
        _fmt(rep.imputation_rmse),
        "" if rep.mask_accuracy is None else _fmt(rep.mask_accuracy),
        "" if rep.test_loglik is None else _fmt(rep.test_loglik),
    ]


def cmd_sweep(cfg: ExperimentConfig) -> Path:
    """Every (offset, variant, seed) run in its own subdirectory; rows keep grid order."""
    s = cfg.sweep
    jobs = [(cfg, o, v, seed) for o in s.offsets for v in s.variants for seed in s.seeds]
    if s.workers > 1:
        with ProcessPoolExecutor(max_workers=s.workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    out = RunDir(cfg.out)
    out.write("results.csv", _csv_text(SWEEP_COLUMNS, rows))
    out.write("sweep_config.json", cfg.to_json())
    return out.path("results.csv")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def resolve_config(args) -> ExperimentConfig:
    cfg = preset(args.preset) if args.preset else ExperimentConfig()
    if args.config:
        try:
            blob = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from None
        cfg = merge(cfg, blob)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="notmiwae", description="Train and evaluate MNAR-aware deep latent variable models.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "generate or load data and apply a missingness mechanism"),
        ("train", "fit a model to data.csv"),
        ("impute", "fill the missing cells of data.csv"),
        ("evaluate", "score imputations against truth.csv"),
        ("sweep", "simulate/train/impute/evaluate over a grid of offsets, variants and seeds"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file, merged over the preset")
        p.add_argument("--preset", help="named preset: uci, ppca, fig1b, clipping")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from checkpoint.json")
        if name == "simulate":
            p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            if args.dump_config:
                sys.stdout.write(cfg.to_json())
                return EXIT_OK
            cmd_simulate(cfg)
        elif args.command == "train":
            cmd_train(cfg, resume=args.resume)
        elif args.command == "impute":
            cmd_impute(cfg)
        elif args.command == "evaluate":
            print(cmd_evaluate(cfg).to_json())
        else:
            print(cmd_sweep(cfg))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # invalid parameter values surfacing from the library (e.g. a bad mechanism rate)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
