"""Figure construction from CSV rows.

Every artist is tagged with a ``gid`` (``series:<label>``, ``band:<label>``,
``left:<label>``, ``right:<label>``, ``marker``) so tests can read the
plotted data back and compare it with the input tables. Rendering is
deterministic: a fixed style, no timestamps in the output metadata.
"""

from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .spec import FigureSpec, SpecError  # noqa: E402

_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "rgbsim-plots",  # stable element ids across renders
}

_NAN = float("nan")


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        raise SpecError(f"input CSV not found: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _require_columns(path: Path, rows: list[dict], *names: str) -> None:
    have = set(rows[0].keys()) if rows else set()
    for name in names:
        if name not in have:
            raise SpecError(f"{path} is missing column {name!r}")


def _summary_series(path: Path, metric: str, value: str = "mean"):
    """(t, value) pairs for one metric from a summary.csv; undefined -> NaN."""
    rows = _read_rows(path)
    _require_columns(path, rows, "t", "metric", "n", "mean", "ci_lo", "ci_hi")
    ts, vals = [], []
    for row in rows:
        if row["metric"] != metric:
            continue
        ts.append(float(row["t"]))
        vals.append(float(row[value]) if row[value] != "" else _NAN)
    if not ts:
        raise SpecError(f"{path} has no rows for metric {metric!r}")
    return ts, vals


def build_timeseries(spec: FigureSpec):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for series in spec.series:
            ts, mean = _summary_series(series.path, spec.metric, "mean")
            _, lo = _summary_series(series.path, spec.metric, "ci_lo")
            _, hi = _summary_series(series.path, spec.metric, "ci_hi")
            (line,) = ax.plot(ts, mean, label=series.label)
            line.set_gid(f"series:{series.label}")
            band = ax.fill_between(ts, lo, hi, alpha=0.25, color=line.get_color())
            band.set_gid(f"band:{series.label}")
        ax.set_xscale(spec.xscale)
        ax.set_yscale(spec.yscale)
        ax.set_xlabel(spec.xlabel or "t [days]")
        ax.set_ylabel(spec.ylabel or spec.metric)
        if spec.title:
            ax.set_title(spec.title)
        ax.legend()
        return fig


def build_dual_axis(spec: FigureSpec):
    with plt.rc_context(_STYLE):
        fig, left = plt.subplots()
        right = left.twinx()
        grids = {}
        right_empty = []
        for series in spec.series:
            ts, lvals = _summary_series(series.path, spec.left_metric, "mean")
            ts_r, rvals = _summary_series(series.path, spec.right_metric, "mean")
            grids[series.label] = tuple(ts)
            if tuple(ts) != tuple(ts_r):
                raise SpecError(
                    f"{series.path}: {spec.left_metric} and {spec.right_metric} "
                    "are on different grids")
            (lline,) = left.plot(ts, lvals, label=series.label)
            lline.set_gid(f"left:{series.label}")
            if all(math.isnan(v) for v in rvals):
                right_empty.append(series.label)
            else:
                (rline,) = right.plot(ts_r, rvals, linestyle="--",
                                      color=lline.get_color())
                rline.set_gid(f"right:{series.label}")
        if len(set(grids.values())) > 1:
            raise SpecError(f"inputs are on mismatched time grids: {sorted(grids)}")
        if right_empty:
            warnings.warn(
                f"right-axis metric {spec.right_metric!r} is empty for "
                f"{right_empty}; rendering left axis only for those inputs")
        if spec.marker_t is not None:
            marker = left.axvline(spec.marker_t, linestyle=":", color="black",
                                  linewidth=1.0)
            marker.set_gid("marker")
        left.set_xlabel(spec.xlabel or "t [days]")
        left.set_ylabel(spec.left_metric)
        right.set_ylabel(spec.right_metric)
        if spec.title:
            left.set_title(spec.title)
        left.legend(loc="upper left")
        return fig


def build_ccdf(spec: FigureSpec):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        styles = ["-", "--", "-.", ":"]
        for idx, series in enumerate(spec.series):
            rows = _read_rows(series.path)
            _require_columns(series.path, rows, "t_days", "survival")
            ts = [float(r["t_days"]) for r in rows]
            sv = [float(r["survival"]) for r in rows]
            dropped = 0
            if spec.xscale == "log" or spec.yscale == "log":
                keep = [
                    (t, s) for t, s in zip(ts, sv)
                    if (spec.xscale != "log" or t > 0.0)
                    and (spec.yscale != "log" or s > 0.0)
                ]
                dropped = len(ts) - len(keep)
                ts = [t for t, _ in keep]
                sv = [s for _, s in keep]
            if dropped:
                warnings.warn(
                    f"{series.path}: dropped {dropped} non-positive points "
                    "from the log axes")
            (line,) = ax.plot(ts, sv, drawstyle="steps-post",
                              linestyle=styles[idx % len(styles)],
                              label=series.label)
            line.set_gid(f"series:{series.label}")
        ax.set_xscale(spec.xscale)
        ax.set_yscale(spec.yscale)
        ax.set_xlabel(spec.xlabel or "t [days]")
        ax.set_ylabel(spec.ylabel or "P(value > t)")
        if spec.title:
            ax.set_title(spec.title)
        ax.legend()
        return fig


_BUILDERS = {
    "timeseries": build_timeseries,
    "dual_axis": build_dual_axis,
    "ccdf": build_ccdf,
}


def build_figure(spec: FigureSpec):
    return _BUILDERS[spec.kind](spec)


def render(spec: FigureSpec) -> Path:
    """Build and write the figure; returns the output path."""
    fig = build_figure(spec)
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if spec.output.suffix == ".svg" else None
    try:
        with plt.rc_context(_STYLE):  # the id salt must be live while saving
            fig.savefig(spec.output, metadata=metadata)
    finally:
        plt.close(fig)
    return spec.output
