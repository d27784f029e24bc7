"""Command-line harness.

Subcommands:

* ``synth``     write a benchmark dataset CSV
* ``calibrate`` fit one method on the calibration split, write a model file
* ``evaluate``  audit a saved model on a dataset split, write a report
* ``compare``   run all four methods and write combined tables and figures

Exit codes: 0 success, 2 schema error, 3 internal error, 4 completed but a
fit was flagged as non-converged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import baselines, dataio, figures, gcp, metrics, mvp, synth
from .core import CalibConfig, Constant, DataError, empirical_quantile
from .dataio import ReadOptions, SchemaError

METHODS = ("naive", "conservative", "gcp", "mvp")

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_INTERNAL = 3
EXIT_NOT_CONVERGED = 4


def _add_common_fit_args(p):
    p.add_argument("--q", type=float, default=0.9, help="target coverage quantile")
    p.add_argument(
        "--alpha", type=float, default=1e-4,
        help="multicalibration tolerance budget (mvp halting condition)",
    )
    p.add_argument("--m", type=int, default=100, help="threshold grid resolution")
    p.add_argument("--seed", type=int, default=0, help="pipeline seed")
    p.add_argument(
        "--max-iters", type=int, default=1000,
        help="iteration cap for the multivalid fitter",
    )
    p.add_argument(
        "--tol", type=float, default=None,
        help="group coverage tolerance for gcp (default: half a point mass "
        "in the smallest group)",
    )
    p.add_argument(
        "--max-sweeps", type=int, default=100, help="sweep cap for gcp"
    )
    p.add_argument(
        "--rule", choices=("plain", "conservative"), default="conservative",
        help="order-statistic rule for the baselines",
    )
    p.add_argument("--jitter", type=float, default=1e-6, help="tie-breaking noise")
    p.add_argument(
        "--bounds", type=float, nargs=2, metavar=("LO", "HI"), default=None,
        help="explicit score normalization bounds",
    )
    p.add_argument(
        "--calib-frac", type=float, default=0.8,
        help="calibration fraction when the file has no split column",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchcal",
        description="Batch conformal calibration with group-conditional and "
        "multivalid coverage.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a benchmark dataset")
    p.add_argument("--task", choices=("linear", "divisible"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-calib", type=int, default=15000)
    p.add_argument("--n-test", type=int, default=20000)
    p.add_argument("--n", type=int, default=10000, help="rows for the divisible task")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit one method and save the model")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model JSON path")
    _add_common_fit_args(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="audit a saved model on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report JSON path")
    p.add_argument(
        "--split", choices=("auto", "calib", "test", "all"), default="auto",
        help="which rows to evaluate (auto: test split if present, else all)",
    )
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="run all four methods and compare")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    _add_common_fit_args(p)
    p.set_defaults(func=cmd_compare)
    return parser


def cmd_synth(args) -> int:
    outdir = args.out
    outdir.mkdir(parents=True, exist_ok=True)
    if args.task == "linear":
        data = synth.gen_linear_group_noise(
            synth.LinearNoiseConfig(
                n_train=args.n_train,
                n_calib=args.n_calib,
                n_test=args.n_test,
                seed=args.seed,
            )
        )
        pred = np.concatenate([data.calib_pred, data.test_pred])
        label = np.concatenate([data.calib_label, data.test_label])
        membership = np.concatenate(
            [data.calib.membership, data.test.membership]
        )
        split = ["calib"] * data.calib.n + ["test"] * data.test.n
        dataio.write_dataset(
            outdir / "dataset.csv", data.groups, membership,
            pred=pred, label=label, split=split,
        )
    else:
        data = synth.gen_divisible_task(synth.DivisibleConfig(n=args.n, seed=args.seed))
        scores = np.concatenate([data.calib_score, data.test_score])
        membership = np.concatenate([data.calib.membership, data.test.membership])
        split = ["calib"] * data.calib.n + ["test"] * data.test.n
        dataio.write_dataset(
            outdir / "dataset.csv", data.groups, membership,
            scores=scores, split=split,
        )
    print(f"wrote {outdir / 'dataset.csv'}")
    return EXIT_OK


def _read_for_fit(args, split_fallback: str) -> dataio.Dataset:
    options = ReadOptions(
        jitter_eps=args.jitter,
        seed=args.seed,
        bounds=tuple(args.bounds) if args.bounds else None,
        split_fallback=split_fallback,
        calib_fraction=args.calib_frac,
    )
    return dataio.read_dataset(args.data, options)


def _fit_one(method, table, groups, args):
    """Fit one method; returns (model, fit summary dict, converged flag)."""
    if method == "naive":
        model = baselines.fit_naive(table, args.q, args.rule)
        return model, {"rule": args.rule}, True
    if method == "conservative":
        model = baselines.fit_conservative(table, groups, args.q, args.rule)
        return model, {"rule": args.rule}, True
    if method == "gcp":
        fit = gcp.fit_gcp(
            table, groups, f0=0.0, q=args.q, tol=args.tol, max_sweeps=args.max_sweeps
        )
        summary = {
            "sweeps": fit.sweeps,
            "converged": fit.converged,
            "max_group_error": float(fit.errors.max()),
            "pinball": fit.pinball,
        }
        return fit.model, summary, fit.converged
    if method == "mvp":
        f0 = Constant(empirical_quantile(table.scores, args.q, "plain"))
        config = CalibConfig(
            q=args.q, alpha=args.alpha, m=args.m,
            max_iters=args.max_iters, jitter_eps=args.jitter, seed=args.seed,
        )
        model, trace = mvp.fit_mvp(table, groups, f0, config)
        summary = {
            "T": len(trace.iterations),
            "halting_reason": trace.halting_reason,
            "skipped": trace.skipped,
            "initial_pinball": trace.initial_pinball,
            "pinball": trace.iterations[-1].pinball
            if trace.iterations
            else trace.initial_pinball,
        }
        return model, summary, trace.halting_reason == "multicalibrated"
    raise ValueError(f"unknown method {method!r}")


def _model_header(method, args, ds, table, fit_summary) -> dict:
    return {
        "method": method,
        "q": args.q,
        "alpha": args.alpha,
        "m": args.m,
        "seed": args.seed,
        "jitter_eps": args.jitter,
        "scale": list(table.scale) if table.scale else None,
        "residual_scores": ds.residual_scores,
        "groups": list(ds.groups.names),
        "fit": fit_summary,
    }


def cmd_calibrate(args) -> int:
    ds = _read_for_fit(args, split_fallback="none")
    table = ds.tables.get("calib", ds.tables.get("all"))
    model, fit_summary, converged = _fit_one(args.method, table, ds.groups, args)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_model(args.out, model, header=_model_header(args.method, args, ds, table, fit_summary))
    print(f"wrote {args.out}")
    if not converged:
        print("warning: fit did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, header = dataio.load_model(args.model)
    options = ReadOptions(
        jitter_eps=header.get("jitter_eps", 1e-6),
        seed=header.get("seed", 0),
        bounds=tuple(header["scale"]) if header.get("scale") else None,
    )
    ds = dataio.read_dataset(args.data, options)
    if list(ds.groups.names) != list(header.get("groups", ds.groups.names)):
        raise SchemaError(
            "dataset group columns do not match the model's group list"
        )
    which = args.split
    if which == "auto":
        which = "test" if "test" in ds.tables else "all"
    table = ds.table(which)

    report = metrics.build_report(
        model, table, ds.groups,
        q=header["q"], alpha=header["alpha"], method=header["method"],
        residual_scores=header.get("residual_scores", True),
        grid_m=header.get("m"),
        metadata={"split": which, "fit": header.get("fit", {})},
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_json(args.out, report.to_dict())
    print(f"wrote {args.out}")
    if not args.no_figures:
        figures.render_report_figures(report, args.out.parent, args.out.stem)
    return EXIT_OK


def cmd_compare(args) -> int:
    ds = _read_for_fit(args, split_fallback="random")
    calib, test = ds.table("calib"), ds.table("test")
    outdir = args.out
    outdir.mkdir(parents=True, exist_ok=True)

    reports = {}
    summaries = {}
    all_converged = True
    for method in METHODS:
        model, fit_summary, converged = _fit_one(method, calib, ds.groups, args)
        all_converged &= converged
        header = _model_header(method, args, ds, calib, fit_summary)
        dataio.save_model(outdir / f"model_{method}.json", model, header=header)
        report = metrics.build_report(
            model, test, ds.groups,
            q=args.q, alpha=args.alpha, method=method,
            residual_scores=ds.residual_scores,
            grid_m=args.m,
            metadata={"split": "test", "fit": fit_summary},
        )
        reports[method] = report
        dataio.save_json(outdir / f"report_{method}.json", report.to_dict())
        summaries[method] = {
            "fit": fit_summary,
            "marginal_coverage": report.marginal_coverage,
            "mean_threshold": float(np.mean(model.thresholds(test))),
        }

    names = list(reports["naive"].group_names)
    cov_rows, width_rows, qerr_rows = [], [], []
    for i, name in enumerate(names):
        n_g = reports["naive"].group_n[i]
        cov_rows.append(
            [name, n_g] + [reports[m].group_coverage[i] for m in METHODS]
        )
        width_rows.append(
            [name] + [reports[m].group_mean_width[i] for m in METHODS]
        )
        qerr_rows.append(
            [name] + [reports[m].group_calibration_error[i] for m in METHODS]
        )
    dataio.write_csv(
        outdir / "coverage_by_group.csv", ["group", "n"] + list(METHODS), cov_rows
    )
    dataio.write_csv(
        outdir / "width_by_group.csv", ["group"] + list(METHODS), width_rows
    )
    dataio.write_csv(
        outdir / "calibration_error_by_group.csv",
        ["group"] + list(METHODS),
        qerr_rows,
    )
    cell_rows = [
        [m, c.group, c.v, c.count, c.covered, c.coverage]
        for m in METHODS
        for c in reports[m].cells
    ]
    dataio.write_csv(
        outdir / "cells.csv",
        ["method", "group", "v", "count", "covered", "coverage"],
        cell_rows,
    )
    dataio.save_json(
        outdir / "summary.json",
        {
            "q": args.q,
            "alpha": args.alpha,
            "m": args.m,
            "seed": args.seed,
            "n_calib": calib.n,
            "n_test": test.n,
            "width_kind": reports["naive"].width_kind,
            "methods": summaries,
        },
    )

    if not args.no_figures:
        figures.coverage_figure(
            names,
            {m: list(reports[m].group_coverage) for m in METHODS},
            args.q,
            outdir / "coverage.png",
        )
        figures.width_figure(
            names,
            {m: list(reports[m].group_mean_width) for m in METHODS},
            reports["naive"].width_kind,
            outdir / "width.png",
        )
        figures.calibration_error_figure(
            names,
            {m: list(reports[m].group_calibration_error) for m in METHODS},
            outdir / "calibration_error.png",
        )
        figures.cell_scatter_figure(
            {m: reports[m].cells for m in METHODS}, args.q, outdir / "cells.png"
        )
    print(f"wrote comparison to {outdir}")
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
