"""Command-line interface: fit, predict, simulate, evaluate, cv.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
CSV files are comma-separated with a header row, '.' decimals, UTF-8.
The CPBART_THREADS environment variable caps worker processes for
cross-validation folds (default 1, serial; results do not depend on it).
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import metrics, predict
from .hmc import HMCConfig
from .marginal import DegenerateSampleError
from .model_io import DataFormatError, load_fit, read_csv, save_fit, write_csv
from .sampler import fit_cpbart, fit_gaussian_bart
from .sim import SimSpec, gen_case
from .tree_mcmc import SamplerConfig
from .trees import Dataset

__all__ = ["entry_point", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

ORACLE_LEVELS = (0.25, 0.5, 0.75)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cpbart", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to a CSV dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--response", required=True, help="response column name")
    fit.add_argument("--out", required=True, help="model file to write")
    fit.add_argument("--trees", type=int, default=75)
    fit.add_argument("--iters", type=int, default=5000)
    fit.add_argument("--burnin", type=int, default=1000)
    fit.add_argument("--nu", type=float, default=0.25)
    fit.add_argument("--min-leaf", type=int, default=5)
    fit.add_argument("--a", type=float, default=1.0)
    fit.add_argument("--b", default="auto", help="'auto' resolves to 9/(14 m)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--baseline", action="store_true", help="Gaussian baseline")

    pred = sub.add_parser("predict", help="predict from a saved model")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", required=True)
    pred.add_argument("--out", required=True)
    pred.add_argument("--quantiles", default="0.25,0.5,0.75")
    pred.add_argument("--density-grid", type=int, default=0)
    pred.add_argument("--mode", choices=("plugin", "full"), default="plugin")
    pred.add_argument("--intervals", type=float, default=None)

    sim = sub.add_parser("simulate", help="generate benchmark data")
    sim.add_argument("--case", type=int, required=True, choices=(1, 2, 3))
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--oracle", default=None, help="true-quantile CSV to write")

    ev = sub.add_parser("evaluate", help="score a model on a CSV dataset")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--response", default="y", help="response column (default y)")
    ev.add_argument("--oracle", default=None)
    ev.add_argument("--out", required=True)
    ev.add_argument("--mode", choices=("plugin", "full"), default="full")

    cv = sub.add_parser("cv", help="k-fold cross-validate on a CSV dataset")
    cv.add_argument("--data", required=True)
    cv.add_argument("--response", required=True)
    cv.add_argument("--out", required=True)
    cv.add_argument("--k", type=int, default=10)
    cv.add_argument("--method", choices=("cpbart", "baseline"), default="cpbart")
    cv.add_argument("--trees", type=int, default=75)
    cv.add_argument("--iters", type=int, default=5000)
    cv.add_argument("--burnin", type=int, default=1000)
    cv.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args) -> SamplerConfig:
    b = None if args.b == "auto" else float(args.b)
    return SamplerConfig(
        m=args.trees,
        nu=args.nu,
        min_leaf=args.min_leaf,
        a=args.a,
        b=b,
        iters=args.iters,
        burnin=args.burnin,
        seed=args.seed,
        hmc=HMCConfig(),
    )


def _dataset_from_csv(path: str, response: str) -> Dataset:
    columns, matrix = read_csv(path)
    if response not in columns:
        raise DataFormatError(f"response column not found: {response}")
    y_col = columns.index(response)
    covariate_cols = [j for j in range(len(columns)) if j != y_col]
    if not covariate_cols:
        raise DataFormatError("no covariate columns")
    if matrix.shape[0] < 10:
        raise DataFormatError("need at least 10 observations")
    return Dataset.from_raw(
        matrix[:, covariate_cols],
        matrix[:, y_col],
        columns=[columns[j] for j in covariate_cols],
    )


def _standardized_test(fit, columns, matrix) -> np.ndarray:
    """Select the training covariates by name and map them to the unit cube."""
    missing = [c for c in fit.columns if c not in columns]
    if missing:
        raise DataFormatError(f"missing covariate column(s): {missing}")
    raw = matrix[:, [columns.index(c) for c in fit.columns]]
    lo, hi = fit.scaling[:, 0], fit.scaling[:, 1]
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def _write_report(path: str, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(float(value))])


def _cmd_fit(args) -> int:
    data = _dataset_from_csv(args.data, args.response)
    config = _config_from_args(args)
    fitter = fit_gaussian_bart if args.baseline else fit_cpbart
    fit = fitter(data, config)
    save_fit(fit, args.out)
    kept = fit.diagnostics.c_trace[config.burnin :]
    name = "sigma2" if args.baseline else "c"
    print(
        f"fit {fit.model}: n={data.n} p={data.p} draws={len(fit.draws)} "
        f"{name} posterior mean={kept.mean():.6g} "
        f"({fit.diagnostics.seconds:.1f}s)"
    )
    return EXIT_OK


def _cmd_predict(args) -> int:
    fit = load_fit(args.model)
    columns, matrix = read_csv(args.data)
    X = _standardized_test(fit, columns, matrix)

    levels = tuple(float(v) for v in args.quantiles.split(",") if v)
    header = ["mean"]
    blocks = [np.asarray(predict.predictive_mean(fit, X, mode=args.mode))[:, None]]
    if levels:
        qs = predict.predictive_quantiles(fit, X, levels, mode=args.mode)
        header += [f"q_{a:g}" for a in levels]
        blocks.append(qs)
        if args.intervals is not None:
            lo_q, hi_q = predict.quantile_posterior_intervals(
                fit, X, levels, level=args.intervals
            )
            for j, a in enumerate(levels):
                header += [f"q_{a:g}_lo", f"q_{a:g}_hi"]
                blocks.append(lo_q[:, j : j + 1])
                blocks.append(hi_q[:, j : j + 1])
    if args.density_grid:
        grid = predict.default_y_grid(fit, size=args.density_grid)
        dens = predict.predictive_density(fit, X, grid, mode=args.mode)
        header += [f"density_{v:.10g}" for v in grid]
        blocks.append(dens)
    write_csv(args.out, header, np.hstack(blocks))
    print(f"wrote {matrix.shape[0]} predictions to {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    spec = SimSpec(case=args.case, n=args.n, seed=args.seed)
    data, oracle = gen_case(spec)
    write_csv(
        args.out,
        list(data.columns) + ["y"],
        np.column_stack([data.X, data.y]),
    )
    if args.oracle:
        write_csv(
            args.oracle,
            [f"true_q_{a:g}" for a in ORACLE_LEVELS] + ["true_density_at_y"],
            np.column_stack(
                [oracle.quantile(data.X, a) for a in ORACLE_LEVELS]
                + [oracle.density(data.X, data.y)]
            ),
        )
    print(f"simulated case {args.case}: n={args.n} -> {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    fit = load_fit(args.model)
    columns, matrix = read_csv(args.data)
    if args.response not in columns:
        raise DataFormatError(f"response column not found: {args.response}")
    y = matrix[:, columns.index(args.response)]
    X = _standardized_test(fit, columns, matrix)

    crps_levels = metrics.default_crps_levels()
    all_levels = np.unique(np.concatenate([crps_levels, np.array(ORACLE_LEVELS)]))
    quants = predict.predictive_quantiles(fit, X, all_levels, mode=args.mode)
    col = {float(a): j for j, a in enumerate(all_levels)}
    means = np.asarray(predict.predictive_mean(fit, X, mode="plugin"))
    dens = predict.predictive_density_at(fit, X, y, mode=args.mode)

    report = metrics.ScoreReport(
        rmse=metrics.rmse(means, y),
        log_score=metrics.mean_log_score(dens),
        crps=metrics.crps_from_quantiles(
            y, lambda a: quants[:, col[float(a)]], crps_levels
        ),
        n_test=y.size,
        n_floored=int(np.count_nonzero(dens < metrics.DENSITY_FLOOR)),
    )
    for a in ORACLE_LEVELS:
        report.pinball[a] = metrics.pinball(y, quants[:, col[a]], a)
    if args.oracle:
        o_cols, o_mat = read_csv(args.oracle)
        lo_q, hi_q = predict.quantile_posterior_intervals(fit, X, ORACLE_LEVELS)
        for j, a in enumerate(ORACLE_LEVELS):
            name = f"true_q_{a:g}"
            if name not in o_cols:
                raise DataFormatError(f"oracle file lacks column {name}")
            truth = o_mat[:, o_cols.index(name)]
            report.qrmse[a] = metrics.qrmse(quants[:, col[a]], truth, a)
            report.coverage[a] = metrics.quantile_coverage(
                (lo_q[:, j], hi_q[:, j]), truth
            )
    _write_report(args.out, report.as_rows())
    print(f"evaluated {y.size} rows -> {args.out}")
    return EXIT_OK


def _cmd_cv(args) -> int:
    data = _dataset_from_csv(args.data, args.response)
    config = SamplerConfig(
        m=args.trees, iters=args.iters, burnin=args.burnin, seed=args.seed
    )
    report = metrics.cross_validate(
        data, k=args.k, method=args.method, config=config, seed=args.seed
    )
    _write_report(args.out, report.as_rows())
    print(f"cv ({args.method}, k={args.k}) -> {args.out}")
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
    "cv": _cmd_cv,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (DataFormatError, DegenerateSampleError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
