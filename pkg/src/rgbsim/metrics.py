"""Snapshot metrics and ensemble statistics.

Accuracy and diversity are per-compartment ratios; FIUA, AIRI, FRQ and AIAI
are the headline indicators of answer-ecosystem health. Ratios with an
empty denominator are reported as undefined (None at the object level, NaN
in the array fast path) and are excluded, not imputed, when aggregating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import ColorSet, ideal_good_distribution

#: Metric keys, in the order they appear in CSV output.
METRIC_NAMES = (
    "pi_W", "pi_T", "pi_S", "pi_L", "pi_A",
    "rho_W", "rho_T", "rho_S", "rho_L", "rho_A",
    "fiua", "airi", "fiua_mass", "airi_mass",
    "frq_se", "frq_gai", "aiai", "majority_irrelevant",
    "count_W", "count_T", "count_S", "count_L", "black_S",
)

_COMP_INDEX = {"W": 0, "T": 1, "S": 2, "L": 3}


def _pooled(snapshot, compartment: str):
    """(relevant, colored, good_mass) for a compartment; "A" pools S and L."""
    if compartment == "A":
        s, l = snapshot["S"], snapshot["L"]
        gm = tuple(a + b for a, b in zip(s.good_mass, l.good_mass))
        return s.relevant + l.relevant, s.colored + l.colored, gm
    c = snapshot[compartment]
    return c.relevant, c.colored, c.good_mass


def accuracy(snapshot, compartment: str) -> Optional[float]:
    """Share of relevant answers among the colored coupons held.

    Black coupons are placeholders, not answers, and stay out of both
    numerator and denominator. Undefined when the compartment holds no
    colored coupon.
    """
    relevant, colored, _ = _pooled(snapshot, compartment)
    if colored == 0:
        return None
    return relevant / colored


def diversity(snapshot, compartment: str, colors: ColorSet) -> Optional[float]:
    """One minus the total-variation distance between the held good-answer
    distribution and the quality-proportional target.

    Blended coupons contribute fractional mass (their good-color weights,
    renormalized); pure coupons contribute one unit to their own color.
    Undefined without at least one relevant coupon.
    """
    relevant, _, good_mass = _pooled(snapshot, compartment)
    total = sum(good_mass[i] for i in colors.good_indices)
    if relevant == 0 or total <= 0.0:
        return None
    ideal = ideal_good_distribution(colors)
    tv = 0.0
    for i in colors.good_indices:
        tv += abs(ideal[colors.labels[i]] - good_mass[i] / total)
    return 1.0 - 0.5 * tv


def fiua(snapshot) -> Optional[float]:
    """Fraction of used Web answers (reposted search-engine or GAI output)
    that are irrelevant. Undefined when nothing has been used yet."""
    w = snapshot["W"]
    used = w.used_total
    if used == 0:
        return None
    return (w.used_s_irrelevant + w.used_a_irrelevant) / used


def airi(snapshot) -> Optional[float]:
    """Among irrelevant used Web answers, the share the GAI produced."""
    w = snapshot["W"]
    irr = w.used_s_irrelevant + w.used_a_irrelevant
    if irr == 0:
        return None
    return w.used_a_irrelevant / irr


def fiua_mass(snapshot) -> Optional[float]:
    """Bad-color mass fraction of used Web answers.

    Blended answers contribute their bad-color weight instead of a whole
    vote, so partially polluted blends register; on pure-color snapshots
    this equals :func:`fiua` exactly.
    """
    w = snapshot["W"]
    used = w.used_total
    if used == 0:
        return None
    return (w.used_s_bad_mass + w.used_a_bad_mass) / used


def airi_mass(snapshot) -> Optional[float]:
    """Among the bad mass carried by used Web answers, the GAI's share."""
    w = snapshot["W"]
    bad = w.used_s_bad_mass + w.used_a_bad_mass
    if bad <= 0.0:
        return None
    return w.used_a_bad_mass / bad


def frq(snapshot, system: str) -> Optional[float]:
    """Cumulative fraction of queries that got a (non-black) response."""
    if system == "se":
        total, answered = snapshot.se_queries_total, snapshot.se_queries_answered
    elif system == "gai":
        total, answered = snapshot.gai_queries_total, snapshot.gai_queries_answered
    else:
        raise ValueError(f"unknown query system {system!r}")
    if total == 0:
        return None
    return answered / total


def aiai(snapshot) -> Optional[float]:
    """Share of LLM coupons whose replication history passed through the
    GAI-to-Web feedback flow (autophagy)."""
    l = snapshot["L"]
    if l.colored == 0:
        return None
    return l.lineage_total / l.colored


def majority_irrelevant(snapshot) -> bool:
    """True when irrelevant used answers strictly outnumber relevant ones."""
    w = snapshot["W"]
    return (w.used_s_irrelevant + w.used_a_irrelevant) > (
        w.used_s_relevant + w.used_a_relevant
    )


def ensemble_probability(runs: Sequence, t: float) -> float:
    """Fraction of runs whose Web holds an irrelevant used majority at t."""
    hits = 0
    for run in runs:
        i = run.grid.index(t)
        if majority_irrelevant(run.snapshot(i)):
            hits += 1
    return hits / len(runs)


@dataclass(frozen=True)
class MetricRow:
    """Every metric of one snapshot; None marks an undefined ratio."""

    time: float
    pi: Mapping[str, Optional[float]]
    rho: Mapping[str, Optional[float]]
    fiua: Optional[float]
    airi: Optional[float]
    fiua_mass: Optional[float]
    airi_mass: Optional[float]
    frq_se: Optional[float]
    frq_gai: Optional[float]
    aiai: Optional[float]
    majority_irrelevant: bool
    counts: Mapping[str, int]
    black_S: int

    def as_dict(self) -> dict[str, Optional[float]]:
        out: dict[str, Optional[float]] = {}
        for comp in ("W", "T", "S", "L", "A"):
            out[f"pi_{comp}"] = self.pi[comp]
            out[f"rho_{comp}"] = self.rho[comp]
        out["fiua"] = self.fiua
        out["airi"] = self.airi
        out["fiua_mass"] = self.fiua_mass
        out["airi_mass"] = self.airi_mass
        out["frq_se"] = self.frq_se
        out["frq_gai"] = self.frq_gai
        out["aiai"] = self.aiai
        out["majority_irrelevant"] = 1.0 if self.majority_irrelevant else 0.0
        for comp in ("W", "T", "S", "L"):
            out[f"count_{comp}"] = float(self.counts[comp])
        out["black_S"] = float(self.black_S)
        return out


def metric_row(snapshot, colors: ColorSet) -> MetricRow:
    return MetricRow(
        time=snapshot.time,
        pi={c: accuracy(snapshot, c) for c in ("W", "T", "S", "L", "A")},
        rho={c: diversity(snapshot, c, colors) for c in ("W", "T", "S", "L", "A")},
        fiua=fiua(snapshot),
        airi=airi(snapshot),
        fiua_mass=fiua_mass(snapshot),
        airi_mass=airi_mass(snapshot),
        frq_se=frq(snapshot, "se"),
        frq_gai=frq(snapshot, "gai"),
        aiai=aiai(snapshot),
        majority_irrelevant=majority_irrelevant(snapshot),
        counts={c: snapshot[c].colored for c in ("W", "T", "S", "L")},
        black_S=snapshot["S"].black,
    )


def series_from_run(run) -> dict[str, np.ndarray]:
    """All metric time series of one run as float arrays (NaN = undefined).

    Vectorized over the sample grid; agrees exactly with
    :func:`metric_row` applied snapshot by snapshot.
    """
    a = run.arrays
    colors: ColorSet = run.colors
    counts = a["counts"]
    colored = counts.sum(axis=2).astype(np.float64)  # (G, 4)
    relevant = a["scal"][:, :, 0].astype(np.float64)
    black_s = a["scal"][:, 2, 1].astype(np.float64)
    goodm = a["goodm"]
    uclass = a["uclass"].astype(np.float64)  # us_rel, us_irr, ua_rel, ua_irr
    queries = a["queries"].astype(np.float64)

    out: dict[str, np.ndarray] = {}

    def ratio(num, den):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    ideal = ideal_good_distribution(colors)
    p_vec = np.zeros(colors.n)
    for i in colors.good_indices:
        p_vec[i] = ideal[colors.labels[i]]
    good_idx = list(colors.good_indices)

    def rho_from(gm, rel):
        tot = gm[:, good_idx].sum(axis=1)
        ok = (rel > 0) & (tot > 0)
        safe = np.where(ok, tot, 1.0)
        tv = np.abs(p_vec[None, good_idx] - gm[:, good_idx] / safe[:, None]).sum(axis=1)
        return np.where(ok, 1.0 - 0.5 * tv, np.nan)

    for s, comp in enumerate(("W", "T", "S", "L")):
        out[f"pi_{comp}"] = ratio(relevant[:, s], colored[:, s])
        out[f"rho_{comp}"] = rho_from(goodm[:, s, :], relevant[:, s])
        out[f"count_{comp}"] = colored[:, s]
    # the GAI answers from the pooled search-engine + LLM contents
    colored_a = colored[:, 2] + colored[:, 3]
    relevant_a = relevant[:, 2] + relevant[:, 3]
    out["pi_A"] = ratio(relevant_a, colored_a)
    out["rho_A"] = rho_from(goodm[:, 2, :] + goodm[:, 3, :], relevant_a)

    used_irr = uclass[:, 1] + uclass[:, 3]
    used_tot = uclass.sum(axis=1)
    out["fiua"] = ratio(used_irr, used_tot)
    out["airi"] = ratio(uclass[:, 3], used_irr)
    umass = a["umass"]
    bad_mass = umass[:, 0] + umass[:, 1]
    out["fiua_mass"] = ratio(bad_mass, used_tot)
    out["airi_mass"] = ratio(umass[:, 1], bad_mass)
    out["frq_se"] = ratio(queries[:, 1], queries[:, 0])
    out["frq_gai"] = ratio(queries[:, 3], queries[:, 2])
    out["aiai"] = ratio(a["lincnt"][:, 3, :].sum(axis=1).astype(np.float64),
                        colored[:, 3])
    out["majority_irrelevant"] = (used_irr > uclass[:, 0] + uclass[:, 2]).astype(np.float64)
    out["black_S"] = black_s
    return out


@dataclass(frozen=True)
class CiSummary:
    """Normal-approximation summary of one sample batch."""

    n: int
    n_undefined: int
    mean: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]

    @property
    def half_width(self) -> Optional[float]:
        if self.mean is None:
            return None
        return self.ci_hi - self.mean

    @property
    def std(self) -> Optional[float]:
        """Sample standard deviation recovered from the band."""
        if self.mean is None:
            return None
        if self.n < 2:
            return 0.0
        return (self.ci_hi - self.mean) / 1.96 * math.sqrt(self.n)


def aggregate_ci(samples: Iterable[Optional[float]]) -> CiSummary:
    """Mean with a 95% normal-approximation band over the defined samples.

    Undefined entries (None or NaN) are excluded and counted separately; a
    single sample collapses the band onto the point.
    """
    vals = []
    undefined = 0
    for s in samples:
        if s is None or (isinstance(s, float) and math.isnan(s)):
            undefined += 1
        else:
            vals.append(float(s))
    n = len(vals)
    if n == 0:
        return CiSummary(0, undefined, None, None, None)
    mean = sum(vals) / n
    if n == 1:
        return CiSummary(1, undefined, mean, mean, mean)
    var = sum((v - mean) ** 2 for v in vals) / (n - 1)
    half = 1.96 * math.sqrt(var / n)
    return CiSummary(n, undefined, mean, mean - half, mean + half)


class EnsembleAccumulator:
    """Streaming mean/CI reduction over per-run metric series.

    Accumulation happens in run-index order with plain float64 sums, so the
    result is byte-deterministic for a given sequence of runs.
    """

    def __init__(self, grid):
        self.grid = tuple(float(t) for t in grid)
        g = len(self.grid)
        self._n = {m: np.zeros(g, dtype=np.int64) for m in METRIC_NAMES}
        self._s1 = {m: np.zeros(g) for m in METRIC_NAMES}
        self._s2 = {m: np.zeros(g) for m in METRIC_NAMES}
        self.n_runs = 0

    def add(self, series: Mapping[str, np.ndarray]) -> None:
        self.n_runs += 1
        for m in METRIC_NAMES:
            v = series[m]
            ok = np.isfinite(v)
            self._n[m] += ok
            vv = np.where(ok, v, 0.0)
            self._s1[m] += vv
            self._s2[m] += vv * vv

    def finalize(self) -> "EnsembleResult":
        stats = {}
        for m in METRIC_NAMES:
            n = self._n[m]
            s1, s2 = self._s1[m], self._s2[m]
            safe_n = np.where(n > 0, n, 1)
            mean = np.where(n > 0, s1 / safe_n, np.nan)
            var = np.where(
                n > 1,
                np.maximum(s2 - safe_n * mean * mean, 0.0) / np.maximum(n - 1, 1),
                0.0,
            )
            half = np.where(n > 0, 1.96 * np.sqrt(var / safe_n), np.nan)
            stats[m] = MetricStats(n=n, mean=mean, ci_lo=mean - half, ci_hi=mean + half)
        return EnsembleResult(grid=self.grid, n_runs=self.n_runs, stats=stats)


@dataclass(frozen=True)
class MetricStats:
    n: np.ndarray
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray


@dataclass(frozen=True)
class EnsembleResult:
    """Per-grid-time metric statistics over an ensemble of runs."""

    grid: tuple[float, ...]
    n_runs: int
    stats: dict[str, MetricStats]

    def index_of(self, t: float) -> int:
        return self.grid.index(t)

    def at(self, metric: str, t: float) -> CiSummary:
        i = self.index_of(t)
        st = self.stats[metric]
        n = int(st.n[i])
        if n == 0:
            return CiSummary(0, self.n_runs, None, None, None)
        return CiSummary(n, self.n_runs - n, float(st.mean[i]),
                         float(st.ci_lo[i]), float(st.ci_hi[i]))

    @property
    def majority_probability(self) -> np.ndarray:
        """Per-time probability that irrelevant used answers hold a Web
        majority (the mean of a 0/1 indicator across runs)."""
        return self.stats["majority_irrelevant"].mean
