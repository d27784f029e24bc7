"""Figure rendering for evaluation reports.

Every figure is derived from the same tables the reports serialize, so the
plots never show anything the delimited output does not. All rendering uses
the Agg backend and writes PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "coverage_figure",
    "width_figure",
    "calibration_error_figure",
    "cell_scatter_figure",
    "render_report_figures",
]

_METHOD_COLORS = {
    "naive": "tab:gray",
    "conservative": "tab:orange",
    "gcp": "tab:blue",
    "mvp": "tab:green",
}


def _grouped_bars(ax, group_names, series, ylabel):
    """Bar chart with one cluster per group and one bar per method."""
    n_groups = len(group_names)
    n_series = max(len(series), 1)
    width = 0.8 / n_series
    xs = np.arange(n_groups)
    for i, (label, values) in enumerate(series.items()):
        offset = (i - (n_series - 1) / 2) * width
        ax.bar(
            xs + offset,
            values,
            width=width,
            label=label,
            color=_METHOD_COLORS.get(label),
        )
    ax.set_xticks(xs)
    ax.set_xticklabels(group_names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)


def coverage_figure(group_names, coverage_by_method, q, path):
    fig, ax = plt.subplots(figsize=(9, 4))
    _grouped_bars(ax, group_names, coverage_by_method, "coverage")
    ax.axhline(q, color="black", linestyle="--", linewidth=1, label=f"target {q}")
    lo = min(min(v) for v in coverage_by_method.values())
    ax.set_ylim(max(0.0, min(lo, q) - 0.05), 1.02)
    ax.set_title("Per-group coverage")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def width_figure(group_names, width_by_method, kind, path):
    fig, ax = plt.subplots(figsize=(9, 4))
    label = "mean set width" if kind == "interval" else "mean threshold"
    _grouped_bars(ax, group_names, width_by_method, label)
    ax.set_title(f"Per-group {label}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def calibration_error_figure(group_names, qerr_by_method, path):
    fig, ax = plt.subplots(figsize=(9, 4))
    _grouped_bars(ax, group_names, qerr_by_method, "quantile calibration error")
    ax.set_yscale("log")
    ax.set_title("Per-group calibration error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cell_scatter_figure(cells_by_method, q, path):
    """Cell count vs cell coverage, one point per (group, threshold) cell."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, cells in cells_by_method.items():
        counts = [c.count for c in cells]
        coverages = [c.coverage for c in cells]
        ax.scatter(
            counts,
            coverages,
            s=9,
            alpha=0.5,
            label=label,
            color=_METHOD_COLORS.get(label),
        )
    ax.axhline(q, color="black", linestyle="--", linewidth=1)
    ax.set_xscale("log")
    ax.set_xlabel("cell size")
    ax.set_ylabel("cell coverage")
    ax.set_title("Coverage by (group, threshold) cell")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report_figures(report, outdir, stem):
    """Render the single-report figures next to the delimited output."""
    names = list(report.group_names)
    method = report.method
    coverage_figure(
        names,
        {method: list(report.group_coverage)},
        report.q,
        outdir / f"{stem}_coverage.png",
    )
    width_figure(
        names,
        {method: list(report.group_mean_width)},
        report.width_kind,
        outdir / f"{stem}_width.png",
    )
    calibration_error_figure(
        names,
        {method: list(report.group_calibration_error)},
        outdir / f"{stem}_calibration_error.png",
    )
    cell_scatter_figure({method: report.cells}, report.q, outdir / f"{stem}_cells.png")
