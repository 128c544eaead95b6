"""Figure specifications: what to draw, from which CSV files, onto which axes.

A spec is a small TOML document. Three kinds are supported:

``timeseries``  one line plus shaded band per input summary.csv
``dual_axis``   probability curves on the left axis, response fractions on
                the right, one pair per input, with an optional vertical
                time marker
``ccdf``        one survival step-curve per input ccdf CSV

The renderer never computes statistics: every plotted value comes straight
out of a CSV cell.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

KINDS = ("timeseries", "dual_axis", "ccdf")
FORMATS = (".png", ".svg", ".pdf")


class SpecError(ValueError):
    """Malformed figure specification."""


@dataclass(frozen=True)
class Series:
    path: Path
    label: str


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    output: Path
    series: tuple[Series, ...]
    metric: Optional[str] = None        # timeseries
    left_metric: str = "majority_irrelevant"   # dual_axis
    right_metric: str = "frq_gai"              # dual_axis
    marker_t: Optional[float] = None           # dual_axis
    xscale: str = "linear"
    yscale: str = "linear"
    title: Optional[str] = None
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None


def load_spec(path: str | Path) -> FigureSpec:
    """Parse and validate a figure spec; paths resolve relative to the file."""
    path = Path(path)
    try:
        doc = _toml.loads(path.read_text())
    except _toml.TOMLDecodeError as exc:
        raise SpecError(f"TOML parse error in {path}: {exc}") from exc

    kind = doc.get("kind")
    if kind not in KINDS:
        raise SpecError(f"kind must be one of {KINDS}, got {kind!r}")
    if "output" not in doc:
        raise SpecError("missing output path")
    output = Path(doc["output"])
    if not output.is_absolute():
        output = path.parent / output
    if output.suffix.lower() not in FORMATS:
        raise SpecError(f"output format must be one of {FORMATS}, got {output.suffix!r}")

    raw_series = doc.get("series", [])
    if not raw_series:
        raise SpecError("at least one [[series]] entry is required")
    series = []
    for entry in raw_series:
        if "path" not in entry:
            raise SpecError("every [[series]] entry needs a path")
        p = Path(entry["path"])
        if not p.is_absolute():
            p = path.parent / p
        series.append(Series(path=p, label=str(entry.get("label", p.stem))))

    for scale_key in ("xscale", "yscale"):
        if doc.get(scale_key, "linear") not in ("linear", "log"):
            raise SpecError(f"{scale_key} must be linear or log")

    if kind == "timeseries" and "metric" not in doc:
        raise SpecError("timeseries specs need a metric")

    return FigureSpec(
        kind=kind,
        output=output,
        series=tuple(series),
        metric=doc.get("metric"),
        left_metric=doc.get("left_metric", "majority_irrelevant"),
        right_metric=doc.get("right_metric", "frq_gai"),
        marker_t=doc.get("marker_t"),
        xscale=doc.get("xscale", "linear"),
        yscale=doc.get("yscale", "linear"),
        title=doc.get("title"),
        xlabel=doc.get("xlabel"),
        ylabel=doc.get("ylabel"),
    )
