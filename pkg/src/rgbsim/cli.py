"""Command-line entry point.

Subcommands: ``simulate`` (one run), ``ensemble`` (independent runs with
confidence bands), ``ode`` (mean-field trajectory), ``compare`` (ensembles
across scenario presets), ``qa-lag`` (Q&A dump analysis) and ``presets``
(print the canonical preset configs). Artifacts are CSV files with stable
schemas plus a ``meta.json`` that records everything needed to reproduce
the run; CSV bytes are deterministic given (config, seed, version).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, engine, meanfield, metrics, qalag, scenario

TRAJECTORY_HEADER = ("run_id", "t", "compartment", "color", "count",
                     "used_s", "used_a", "ai_lineage_count", "black")
METRICS_HEADER = ("run_id", "t", "metric", "value", "defined")
SUMMARY_HEADER = ("t", "metric", "n", "mean", "ci_lo", "ci_hi")
COMPARE_HEADER = ("scenario",) + SUMMARY_HEADER
LAGS_HEADER = ("question_id", "time_to_first_answer", "time_to_best_posted",
               "time_to_best_emerged", "emergence_after_posting")
CCDF_HEADER = ("t_days", "survival")

CCDF_METRICS = ("first_answer", "best_posted", "best_emerged",
                "emergence_after_posting")


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt_value(v) for v in row])


def _build_grid(args) -> np.ndarray:
    if getattr(args, "grid", None):
        spec = args.grid
        if not spec.startswith("log:"):
            raise ValueError(f"unsupported grid spec {spec!r}; expected log:<n>")
        n = int(spec.split(":", 1)[1])
        if n < 2:
            raise ValueError("log grid needs at least 2 points")
        return np.geomspace(1.0, args.t_end, n)
    step = args.grid_step
    return np.arange(0.0, args.t_end + 0.5 * step, step)


def _overlay_document(args) -> str:
    """Assemble the TOML document for this invocation: a preset or config
    file plus any command-line overrides."""
    sections: dict[str, dict[str, str]] = {}

    def put(dotted: str, raw_value: str) -> None:
        section, _, key = dotted.rpartition(".")
        if not section:
            raise ValueError(f"override {dotted!r} must be section.key")
        sections.setdefault(section, {})[key] = raw_value

    for item in args.override or ():
        key, _, value = item.partition("=")
        if not value:
            raise ValueError(f"--override expects key=value, got {item!r}")
        put(key.strip(), value.strip())
    if getattr(args, "black_init", None) is not None:
        put("blackcoupons.black_init", str(args.black_init))
    if getattr(args, "mixing", None) is not None:
        mode = {"none": "none", "gai": "gai_only", "gai+se": "gai_and_se"}[args.mixing]
        put("mixing.mode", f'"{mode}"')
    if getattr(args, "xi", None) is not None:
        put("mixing.xi", repr(args.xi))

    if args.config:
        base = Path(args.config).read_text()
    else:
        base = f'preset = "{args.preset}"\n'
    lines = [base.rstrip(), ""]
    for section in sorted(sections):
        lines.append(f"[{section}]")
        for key, value in sections[section].items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def _load_scenario(args):
    """Resolve the scenario and fill unset CLI values from [simulation]."""
    text = _overlay_document(args)
    cfg = scenario.load_config(text)
    defaults = scenario.simulation_defaults(text)
    fallbacks = {"t_end": 1000.0, "grid_step": 1.0, "seed": 0, "runs": 400,
                 "dt": 0.01, "jobs": None}
    for name, final in fallbacks.items():
        if getattr(args, name, None) is None:
            setattr(args, name, defaults.get(name, final))
    return cfg


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("RGB_SIM_OUT", "."))


def _write_meta(out: Path, command: str, cfg, extra: dict, started: float) -> None:
    meta = {
        "tool": "rgbsim",
        "version": __version__,
        "command": command,
        "config": scenario.save_config(cfg),
        "wall_time_seconds": time.time() - started,
    }
    meta.update(extra)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _trajectory_rows(run_id: str, run: engine.RunResult):
    labels = run.colors.labels
    a = run.arrays
    for gi, t in enumerate(run.grid):
        for s, comp in enumerate(engine.COMPARTMENTS):
            for k, label in enumerate(labels):
                yield (run_id, t, comp, label,
                       int(a["counts"][gi, s, k]),
                       int(a["used_s"][gi, k]) if comp == "W" else 0,
                       int(a["used_a"][gi, k]) if comp == "W" else 0,
                       int(a["lincnt"][gi, s, k]),
                       0)
            black = int(a["scal"][gi, s, 1])
            yield (run_id, t, comp, "black", black, 0, 0, 0, black)


def _metric_rows(run_id: str, grid, series: dict):
    for gi, t in enumerate(grid):
        for name in metrics.METRIC_NAMES:
            v = float(series[name][gi])
            if np.isnan(v):
                yield (run_id, t, name, None, "false")
            else:
                yield (run_id, t, name, v, "true")


def _summary_rows(result) -> list:
    rows = []
    for gi, t in enumerate(result.grid):
        for name in metrics.METRIC_NAMES:
            st = result.stats[name]
            n = int(st.n[gi])
            if n == 0:
                rows.append((t, name, 0, None, None, None))
            else:
                rows.append((t, name, n, float(st.mean[gi]),
                             float(st.ci_lo[gi]), float(st.ci_hi[gi])))
    return rows


def _cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load_scenario(args)
    grid = _build_grid(args)
    out = _out_dir(args)
    run = engine.run_single(cfg, args.seed, grid)
    series = metrics.series_from_run(run)
    _write_csv(out / "trajectory.csv", TRAJECTORY_HEADER,
               _trajectory_rows("0", run))
    _write_csv(out / "metrics.csv", METRICS_HEADER,
               _metric_rows("0", run.grid, series))
    _write_meta(out / "meta.json", "simulate", cfg,
                {"seed": args.seed, "grid": [float(t) for t in run.grid]},
                started)
    return 0


def _cmd_ensemble(args) -> int:
    started = time.time()
    cfg = _load_scenario(args)
    grid = _build_grid(args)
    out = _out_dir(args)

    per_run_rows: list = []

    def on_run(idx: int, series: dict) -> None:
        if args.per_run_metrics:
            per_run_rows.extend(_metric_rows(str(idx), tuple(grid), series))

    result = engine.run_ensemble(cfg, args.seed, args.runs, grid,
                                 jobs=args.jobs, on_run=on_run)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, _summary_rows(result))
    if args.per_run_metrics:
        _write_csv(out / "metrics.csv", METRICS_HEADER, per_run_rows)
    _write_meta(out / "meta.json", "ensemble", cfg,
                {"seed": args.seed, "runs": args.runs,
                 "grid": [float(t) for t in grid]},
                started)
    return 0


def _cmd_ode(args) -> int:
    started = time.time()
    cfg = _load_scenario(args)
    grid = _build_grid(args)
    out = _out_dir(args)
    params = meanfield.OdeParams(config=cfg, dt=args.dt, horizon=float(grid[-1]))
    traj = meanfield.integrate(params, grid)
    series = meanfield.ode_metrics(traj, cfg.colors)

    labels = cfg.colors.labels

    def rows():
        for gi, t in enumerate(traj.grid):
            st = traj.states[gi]
            per_comp = {"W": st.n_W, "T": st.n_T, "S": st.n_S, "L": st.n_L}
            for comp, masses in per_comp.items():
                for k, label in enumerate(labels):
                    yield ("ode", t, comp, label, masses[k],
                           st.used_s[k] if comp == "W" else 0,
                           st.used_a[k] if comp == "W" else 0,
                           None, 0)
                black = st.n_S_black if comp == "S" else 0
                yield ("ode", t, comp, "black", black, 0, 0, None, black)

    def metric_rows():
        for gi, t in enumerate(traj.grid):
            for name, values in series.items():
                v = values[gi]
                if v is None:
                    yield ("ode", t, name, None, "false")
                else:
                    yield ("ode", t, name, v, "true")

    _write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, rows())
    _write_csv(out / "metrics.csv", METRICS_HEADER, metric_rows())
    _write_meta(out / "meta.json", "ode", cfg,
                {"dt": args.dt, "grid": [float(t) for t in traj.grid]},
                started)
    return 0


def _cmd_compare(args) -> int:
    started = time.time()
    out = _out_dir(args)
    for name, value in (("t_end", 1000.0), ("grid_step", 1.0), ("seed", 0),
                        ("runs", 400)):
        if getattr(args, name, None) is None:
            setattr(args, name, value)
    grid = _build_grid(args)
    names = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    compare_rows = []
    configs = {}
    for name in names:
        ns = argparse.Namespace(**vars(args))
        ns.preset = name
        ns.config = None
        cfg = _load_scenario(ns)
        configs[name] = cfg
        result = engine.run_ensemble(cfg, args.seed, args.runs, grid,
                                     jobs=args.jobs)
        rows = _summary_rows(result)
        _write_csv(out / name / "summary.csv", SUMMARY_HEADER, rows)
        compare_rows.extend((name,) + row for row in rows)
    _write_csv(out / "compare.csv", COMPARE_HEADER, compare_rows)
    _write_meta(out / "meta.json", "compare", configs[names[0]],
                {"scenarios": names, "seed": args.seed, "runs": args.runs,
                 "grid": [float(t) for t in grid]},
                started)
    return 0


def _cmd_qa_lag(args) -> int:
    started = time.time()
    out = _out_dir(args)
    index = qalag.build_qa_index(args.posts)
    qalag.attach_votes(index, args.votes)
    lags = qalag.all_lag_statistics(index, strict=args.strict_emergence)

    _write_csv(out / "lags.csv", LAGS_HEADER,
               ((s.question_id, s.time_to_first_answer, s.time_to_best_posted,
                 s.time_to_best_emerged, s.emergence_after_posting)
                for s in lags))
    samples = {
        "first_answer": [s.time_to_first_answer for s in lags
                         if s.time_to_first_answer is not None],
        "best_posted": [s.time_to_best_posted for s in lags
                        if s.time_to_best_posted is not None],
        "best_emerged": [s.time_to_best_emerged for s in lags
                         if s.time_to_best_emerged is not None],
        "emergence_after_posting": [s.emergence_after_posting for s in lags
                                    if s.emergence_after_posting is not None],
    }
    for name in CCDF_METRICS:
        series = qalag.ccdf(samples[name])
        _write_csv(out / f"ccdf_{name}.csv", CCDF_HEADER,
                   zip(series.values, series.survival))
    meta = {
        "tool": "rgbsim",
        "version": __version__,
        "command": "qa-lag",
        "posts": str(args.posts),
        "votes": str(args.votes),
        "strict_emergence": bool(args.strict_emergence),
        "questions_with_answers": len(lags),
        "counters": index.counters,
        "wall_time_seconds": time.time() - started,
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "qa_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_presets(args) -> int:
    for name in scenario.PRESET_NAMES:
        print(f"# ---- {name} ----")
        print(scenario.save_config(scenario.preset(name)))
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="gai", choices=scenario.PRESET_NAMES,
                   help="scenario preset to start from")
    p.add_argument("--config", help="TOML config file (may name a preset and override fields)")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="override one config field, e.g. flows.A.alpha=0.5 (repeatable)")
    p.add_argument("--black-init", type=int, default=None,
                   help="initial black coupons in the search engine")
    p.add_argument("--mixing", choices=("none", "gai", "gai+se"), default=None,
                   help="answer mixing condition")
    p.add_argument("--xi", type=float, default=None,
                   help="quality-discrimination weight for gai+se mixing")
    p.add_argument("--out", help="output directory (default: $RGB_SIM_OUT or .)")


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-end", type=float, default=None,
                   help="horizon in days (default 1000, or [simulation] t_end)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid-step", type=float, default=None,
                   help="sample grid step in days (default 1)")
    g.add_argument("--grid", help="alternative grid spec, e.g. log:50")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="rgbsim",
        description="Simulate answer generation, replication and reinforcement "
                    "across Web, training-set, search-engine and LLM compartments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one stochastic run")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("ensemble", help="independent runs with 95% bands")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--seed", type=int, default=None, help="ensemble master seed")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: all cores)")
    p.add_argument("--per-run-metrics", action="store_true",
                   help="also write per-run metrics.csv")
    p.set_defaults(fn=_cmd_ensemble)

    p = sub.add_parser("ode", help="mean-field trajectory")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--dt", type=float, default=None, help="integration step in days")
    p.set_defaults(fn=_cmd_ode)

    p = sub.add_parser("compare", help="ensembles across scenario presets")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--scenarios", default="pre-gai,gai,post-gai",
                   help="comma-separated preset names")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("qa-lag", help="answer-lag analysis of a Q&A dump")
    p.add_argument("--posts", required=True, help="Posts.xml path")
    p.add_argument("--votes", required=True, help="Votes.xml path")
    p.add_argument("--out", help="output directory (default: $RGB_SIM_OUT or .)")
    p.add_argument("--strict-emergence", action="store_true",
                   help="require strict score dominance for emergence")
    p.set_defaults(fn=_cmd_qa_lag)

    p = sub.add_parser("presets", help="print the canonical preset configs")
    p.set_defaults(fn=_cmd_presets)

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures exit 1 with a message
        print(f"rgbsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
