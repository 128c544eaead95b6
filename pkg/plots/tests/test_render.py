import math
from pathlib import Path

import pytest

from rgbsim_plots import cli
from rgbsim_plots.render import build_figure, render
from rgbsim_plots.spec import SpecError, load_spec

METRICS_ORDER = ("fiua", "majority_irrelevant", "frq_gai")


def write_summary(path: Path, label_value: float, grid=(0.0, 1.0, 2.0),
                  frq_empty=False):
    """Minimal summary.csv: three metrics on a small grid."""
    lines = ["t,metric,n,mean,ci_lo,ci_hi"]
    for t in grid:
        for metric in METRICS_ORDER:
            if t == 0.0 or (frq_empty and metric == "frq_gai"):
                lines.append(f"{t},{metric},0,,,")
            else:
                v = label_value * (1 + t)
                lines.append(f"{t},{metric},4,{v},{v * 0.9},{v * 1.1}")
    path.write_text("\n".join(lines) + "\n")


def write_ccdf(path: Path, points):
    lines = ["t_days,survival"] + [f"{t},{s}" for t, s in points]
    path.write_text("\n".join(lines) + "\n")


def line_by_gid(fig, gid):
    for ax in fig.axes:
        for artist in ax.lines:
            if artist.get_gid() == gid:
                return artist
    return None


def spec_file(tmp_path: Path, body: str) -> Path:
    p = tmp_path / "figure.toml"
    p.write_text(body)
    return p


# -- timeseries -------------------------------------------------------------------


def test_timeseries_one_band_per_input(tmp_path):
    for i, name in enumerate(("a.csv", "b.csv", "c.csv")):
        write_summary(tmp_path / name, 0.01 * (i + 1))
    spec = load_spec(spec_file(tmp_path, """
kind = "timeseries"
metric = "fiua"
output = "fig.png"
[[series]]
path = "a.csv"
label = "pre"
[[series]]
path = "b.csv"
label = "now"
[[series]]
path = "c.csv"
label = "later"
"""))
    fig = build_figure(spec)
    labels = [ln.get_gid() for ax in fig.axes for ln in ax.lines]
    assert sorted(labels) == ["series:later", "series:now", "series:pre"]
    bands = [a.get_gid() for ax in fig.axes for a in ax.collections]
    assert sorted(bands) == ["band:later", "band:now", "band:pre"]


def test_timeseries_reads_back_exact_values_with_gaps(tmp_path):
    write_summary(tmp_path / "a.csv", 0.25)
    spec = load_spec(spec_file(tmp_path, """
kind = "timeseries"
metric = "fiua"
output = "fig.png"
[[series]]
path = "a.csv"
label = "only"
"""))
    fig = build_figure(spec)
    line = line_by_gid(fig, "series:only")
    xs, ys = line.get_data()
    assert list(xs) == [0.0, 1.0, 2.0]
    assert math.isnan(ys[0])  # undefined stays a gap, never a zero
    assert ys[1] == pytest.approx(0.5)
    assert ys[2] == pytest.approx(0.75)


def test_missing_column_is_named(tmp_path):
    (tmp_path / "bad.csv").write_text("t,metric,n\n0,fiua,1\n")
    spec = load_spec(spec_file(tmp_path, """
kind = "timeseries"
metric = "fiua"
output = "fig.png"
[[series]]
path = "bad.csv"
"""))
    with pytest.raises(SpecError, match="mean"):
        build_figure(spec)


# -- dual axis ---------------------------------------------------------------------


def dual_spec(tmp_path, entries, marker="marker_t = 60.0"):
    series = "\n".join(
        f'[[series]]\npath = "{name}"\nlabel = "{label}"' for name, label in entries)
    return load_spec(spec_file(tmp_path, f"""
kind = "dual_axis"
left_metric = "majority_irrelevant"
right_metric = "frq_gai"
{marker}
output = "fig.png"
{series}
"""))


def test_dual_axis_two_curves_per_input_plus_marker(tmp_path):
    grid = (0.0, 30.0, 60.0, 90.0, 120.0)
    for name, v in (("b1.csv", 0.001), ("b10.csv", 0.0005), ("b100.csv", 0.0001)):
        write_summary(tmp_path / name, v, grid=grid)
    fig = build_figure(dual_spec(
        tmp_path, [("b1.csv", "1"), ("b10.csv", "10"), ("b100.csv", "100")]))
    gids = [ln.get_gid() for ax in fig.axes for ln in ax.lines if ln.get_gid()]
    for label in ("1", "10", "100"):
        assert f"left:{label}" in gids
        assert f"right:{label}" in gids
    assert "marker" in gids
    assert len([g for g in gids if g != "marker"]) == 6
    marker = line_by_gid(fig, "marker")
    assert marker.get_xdata()[0] == pytest.approx(60.0)


def test_dual_axis_empty_right_column_degrades_with_warning(tmp_path):
    write_summary(tmp_path / "b1.csv", 0.001, frq_empty=True)
    with pytest.warns(UserWarning, match="frq_gai"):
        fig = build_figure(dual_spec(tmp_path, [("b1.csv", "1")], marker=""))
    gids = [ln.get_gid() for ax in fig.axes for ln in ax.lines if ln.get_gid()]
    assert gids == ["left:1"]


def test_dual_axis_rejects_mismatched_grids(tmp_path):
    write_summary(tmp_path / "a.csv", 0.001, grid=(0.0, 1.0))
    write_summary(tmp_path / "b.csv", 0.001, grid=(0.0, 2.0))
    with pytest.raises(SpecError, match="mismatched"):
        build_figure(dual_spec(tmp_path, [("a.csv", "a"), ("b.csv", "b")], marker=""))


# -- ccdf --------------------------------------------------------------------------


def test_ccdf_linear_readback_matches_input_exactly(tmp_path):
    points = [(1.0, 0.75), (2.0, 0.25), (5.0, 0.0)]
    write_ccdf(tmp_path / "c.csv", points)
    spec = load_spec(spec_file(tmp_path, """
kind = "ccdf"
output = "fig.png"
xscale = "linear"
yscale = "linear"
[[series]]
path = "c.csv"
label = "lags"
"""))
    fig = build_figure(spec)
    xs, ys = line_by_gid(fig, "series:lags").get_data()
    assert list(zip(xs, ys)) == points


def test_ccdf_log_axes_drop_nonpositive_with_warning(tmp_path):
    write_ccdf(tmp_path / "c.csv", [(1.0, 0.75), (2.0, 0.25), (5.0, 0.0)])
    spec = load_spec(spec_file(tmp_path, """
kind = "ccdf"
output = "fig.png"
xscale = "log"
yscale = "log"
[[series]]
path = "c.csv"
label = "lags"
"""))
    with pytest.warns(UserWarning, match="dropped 1"):
        fig = build_figure(spec)
    xs, ys = line_by_gid(fig, "series:lags").get_data()
    assert list(zip(xs, ys)) == [(1.0, 0.75), (2.0, 0.25)]


def test_ccdf_three_series_get_distinct_styles(tmp_path):
    for name in ("first.csv", "posted.csv", "emerged.csv"):
        write_ccdf(tmp_path / name, [(1.0, 0.5), (2.0, 0.1)])
    spec = load_spec(spec_file(tmp_path, """
kind = "ccdf"
output = "fig.png"
[[series]]
path = "first.csv"
label = "first"
[[series]]
path = "posted.csv"
label = "posted"
[[series]]
path = "emerged.csv"
label = "emerged"
"""))
    fig = build_figure(spec)
    styles = {ln.get_gid(): ln.get_linestyle() for ax in fig.axes for ln in ax.lines}
    assert len(set(styles.values())) == 3


# -- rendering ----------------------------------------------------------------------


def test_repeated_render_is_byte_identical(tmp_path):
    write_summary(tmp_path / "a.csv", 0.25)
    spec_path = spec_file(tmp_path, """
kind = "timeseries"
metric = "fiua"
output = "fig.png"
[[series]]
path = "a.csv"
label = "only"
""")
    first = render(load_spec(spec_path)).read_bytes()
    second = render(load_spec(spec_path)).read_bytes()
    assert first == second


@pytest.mark.parametrize("suffix", ["png", "svg", "pdf"])
def test_render_formats(tmp_path, suffix):
    write_ccdf(tmp_path / "c.csv", [(1.0, 0.5)])
    spec_path = spec_file(tmp_path, f"""
kind = "ccdf"
output = "fig.{suffix}"
[[series]]
path = "c.csv"
""")
    out = render(load_spec(spec_path))
    assert out.exists() and out.stat().st_size > 0


def test_svg_render_is_byte_identical(tmp_path):
    write_ccdf(tmp_path / "c.csv", [(1.0, 0.5), (3.0, 0.25)])
    spec_path = spec_file(tmp_path, """
kind = "ccdf"
output = "fig.svg"
[[series]]
path = "c.csv"
""")
    first = render(load_spec(spec_path)).read_bytes()
    second = render(load_spec(spec_path)).read_bytes()
    assert first == second


# -- spec validation -----------------------------------------------------------------


def test_spec_validation_errors(tmp_path):
    with pytest.raises(SpecError, match="kind"):
        load_spec(spec_file(tmp_path, 'kind = "pie"\noutput = "f.png"\n'))
    with pytest.raises(SpecError, match="format"):
        load_spec(spec_file(tmp_path, 'kind = "ccdf"\noutput = "f.bmp"\n[[series]]\npath="x"\n'))
    with pytest.raises(SpecError, match="series"):
        load_spec(spec_file(tmp_path, 'kind = "ccdf"\noutput = "f.png"\n'))
    with pytest.raises(SpecError, match="metric"):
        load_spec(spec_file(tmp_path, 'kind = "timeseries"\noutput = "f.png"\n[[series]]\npath="x"\n'))


# -- cli ------------------------------------------------------------------------------


def test_cli_renders_and_reports_errors(tmp_path, capsys):
    write_ccdf(tmp_path / "c.csv", [(1.0, 0.5)])
    spec_path = spec_file(tmp_path, """
kind = "ccdf"
output = "out/fig.png"
[[series]]
path = "c.csv"
""")
    assert cli.main(["render", "--spec", str(spec_path)]) == 0
    assert (tmp_path / "out" / "fig.png").exists()

    assert cli.main(["render", "--spec", str(tmp_path / "nope.toml")]) == 1
    assert "error" in capsys.readouterr().err

    with pytest.raises(SystemExit) as err:
        cli.parse_args(["render"])
    assert err.value.code == 2
