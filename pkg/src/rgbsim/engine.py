"""Event-driven simulation of coupon generation, replication and expiry.

A coupon is one replica of an answer living in one of four compartments:
the Web (W), the training set (T), the search engine index (S) and the
LLM (L). Six flows move copies between them, each thinned by a
quality-bias acceptance draw; every coupon carries an exponential expiry
clock. The simulation is exact: one aggregated next-event clock with
channel rates recomputed after every event, and deaths realized as
aggregate channels with a uniformly chosen victim (equivalent in
distribution to per-coupon timers because all clocks are memoryless).

Full runs execute inside a compiled loop (see ``_kernel``); this module
owns the public surface: state construction, single-event stepping, runs
and ensembles, plus readable snapshot and coupon views. ``apply_event`` is
a pure-Python reference of the per-channel semantics that consumes the
random stream in exactly the same order as the compiled loop, which the
test suite uses to cross-check the kernel event by event.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import _kernel as _k
from .core import (
    ColorSet,
    ScenarioConfig,
    acceptance_probability,
    classify_answer,
    require_valid,
)

COMPARTMENTS = ("W", "T", "S", "L")

CHANNEL_KINDS = (
    "post-P", "curate-H", "index-I", "train-T", "query-S", "query-A",
    "death-W", "death-T", "death-S", "death-L",
)

ORIGIN_NAMES = (
    "P", "H-fresh", "H-fromSE", "I", "T-train", "S-used", "A-used",
    "F-feedback", "initial-black",
)

_M64 = (1 << 64) - 1
_GAMMA64 = 0x9E3779B97F4A7C15

_MIX_MODES = {"none": 0, "gai_only": 1, "gai_and_se": 2}


def _temper(x: int) -> int:
    """splitmix64 output function on a plain Python integer."""
    x &= _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def seed_for(master_seed: int, run_index: int) -> int:
    """Derive the seed of one ensemble run as a pure function of its index.

    Ensembles are therefore reproducible run-by-run on any machine and with
    any parallelism degree.
    """
    return _temper((master_seed + run_index * _GAMMA64) & _M64)


class SplitMix64:
    """The engine's random stream: a single 64-bit splitmix64 state.

    The compiled kernels advance the same state cell in place, so Python
    and kernel draws interleave into one reproducible stream.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = np.array([seed & _M64], dtype=np.uint64)

    def random(self) -> float:
        s = (int(self.state[0]) + _GAMMA64) & _M64
        self.state[0] = s
        return (_temper(s) >> 11) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class Coupon:
    """One answer replica, as seen through the inspection API."""

    id: int
    color: Optional[tuple[float, ...]]  # None for black coupons
    black: bool
    origin_flow: str
    ai_lineage: bool
    birth_time: float


@dataclass(frozen=True)
class EventChannel:
    kind: str
    current_rate: float


@dataclass(frozen=True)
class AppliedEvent:
    kind: str
    time: float


@dataclass(frozen=True)
class CompartmentSnapshot:
    """Aggregates of one compartment, sufficient for every metric.

    ``counts`` bins blended coupons by their dominant color; ``good_mass``
    holds, per color, the renormalized good-color mass summed over
    relevant-classified coupons (a pure good coupon contributes one unit to
    its own color). Used-answer fields are only ever non-zero in the Web.
    """

    counts: tuple[int, ...]
    lineage_counts: tuple[int, ...]
    good_mass: tuple[float, ...]
    relevant: int
    black: int
    used_s_by_color: tuple[int, ...]
    used_a_by_color: tuple[int, ...]
    used_s_relevant: int
    used_s_irrelevant: int
    used_a_relevant: int
    used_a_irrelevant: int
    used_s_bad_mass: float = 0.0
    used_a_bad_mass: float = 0.0

    @property
    def colored(self) -> int:
        return sum(self.counts)

    @property
    def total(self) -> int:
        return self.colored + self.black

    @property
    def lineage_total(self) -> int:
        return sum(self.lineage_counts)

    @property
    def used_total(self) -> int:
        return (self.used_s_relevant + self.used_s_irrelevant
                + self.used_a_relevant + self.used_a_irrelevant)


@dataclass(frozen=True)
class Snapshot:
    time: float
    compartments: Mapping[str, CompartmentSnapshot]
    se_queries_total: int
    se_queries_answered: int
    gai_queries_total: int
    gai_queries_answered: int

    def __getitem__(self, name: str) -> CompartmentSnapshot:
        return self.compartments[name]


@dataclass(frozen=True)
class _Tables:
    par: tuple  # (pf, pi, acc, bias, denom, q, good, gcum)
    cap0: int


@lru_cache(maxsize=32)
def _tables(cfg: ScenarioConfig) -> _Tables:
    colors = cfg.colors
    K = colors.n
    f = cfg.flows
    pf = np.zeros(14, dtype=np.float64)
    pf[_k.PF_LAM_P] = f.P.rate
    pf[_k.PF_LAM_H] = f.H.rate
    pf[_k.PF_LAM_I] = f.I.rate
    pf[_k.PF_LAM_T] = f.T.rate
    pf[_k.PF_LAM_S] = f.S.rate
    pf[_k.PF_LAM_A] = cfg.lambda_A
    pf[_k.PF_ALPHA] = f.A.alpha or 0.0
    pf[_k.PF_BETA] = f.F.beta or 0.0
    pf[_k.PF_XI] = cfg.mixing.xi or 0.0
    pf[_k.PF_MU_W] = cfg.mu_W
    pf[_k.PF_MU_T] = cfg.mu_T
    pf[_k.PF_MU_S] = cfg.mu_S
    pf[_k.PF_MU_L] = cfg.mu_L
    pf[_k.PF_GAMMA] = f.H.gamma or 0.0

    pi = np.zeros(4, dtype=np.int64)
    pi[_k.PI_K] = K
    pi[_k.PI_W_COPIES] = f.T.w or 1
    pi[_k.PI_GATE] = 1 if cfg.gai_black_gate else 0
    pi[_k.PI_MIXMODE] = _MIX_MODES[cfg.mixing.mode]

    q = np.array(colors.qualities, dtype=np.float64)
    acc = np.ones((7, K), dtype=np.float64)
    bias = np.zeros(7, dtype=np.float64)
    denom = np.ones(7, dtype=np.float64)
    for row, fp in enumerate((f.P, f.H, f.I, f.T, f.S, f.A, f.F)):
        if fp.bias is None:
            continue  # unconditional acceptance (training)
        bias[row] = fp.bias
        denom[row] = float(sum(colors.qualities)) + K * fp.bias
        for c in range(K):
            acc[row, c] = acceptance_probability(float(q[c]), fp.bias, colors)

    good = np.array(
        [1 if label in colors.good else 0 for label in colors.labels],
        dtype=np.uint8,
    )
    gcum = np.cumsum(np.array(cfg.generator, dtype=np.float64))
    par = (pf, pi, acc, bias, denom, q, good, gcum)
    cap0 = max(1 << 14, 4 * (cfg.black_init + int(f.T.w or 1) + 8))
    return _Tables(par=par, cap0=cap0)


class SimState:
    """Mutable simulation state: coupon storage plus counters.

    Snapshot aggregates are computed on demand by scanning the storage; the
    per-event bookkeeping is limited to compartment sizes, query counters
    and the black-coupon count.
    """

    __slots__ = (
        "colors", "cap", "col", "org", "lin", "birth", "cid", "mixw",
        "nn", "qcnt", "nblack", "misc", "tarr",
        "_ratebuf", "_xb", "_pend", "_resume", "_lastkind",
    )

    def __init__(self, colors: ColorSet, cap: int):
        K = colors.n
        self.colors = colors
        self.cap = cap
        self.col = np.empty((4, cap), dtype=np.int16)
        self.org = np.empty((4, cap), dtype=np.int8)
        self.lin = np.zeros((4, cap), dtype=np.uint8)
        self.birth = np.zeros((4, cap), dtype=np.float64)
        self.cid = np.zeros((4, cap), dtype=np.int64)
        self.mixw = np.zeros((4, cap, K), dtype=np.float64)
        self.nn = np.zeros(4, dtype=np.int64)
        self.qcnt = np.zeros(4, dtype=np.int64)    # se tot/ans, gai tot/ans
        self.nblack = np.zeros(1, dtype=np.int64)  # black coupons in S
        self.misc = np.zeros(1, dtype=np.int64)    # next coupon id
        self.tarr = np.zeros(1, dtype=np.float64)
        self._ratebuf = np.zeros(10, dtype=np.float64)
        self._xb = np.zeros(K, dtype=np.float64)
        self._pend = np.zeros(2, dtype=np.float64)
        self._resume = np.zeros(1, dtype=np.int64)
        self._lastkind = np.zeros(1, dtype=np.int64)

    def _grow(self):
        newcap = self.cap * 2
        K = self.colors.n
        for name, dtype, shape in (
            ("col", np.int16, (4, newcap)),
            ("org", np.int8, (4, newcap)),
            ("lin", np.uint8, (4, newcap)),
            ("birth", np.float64, (4, newcap)),
            ("cid", np.int64, (4, newcap)),
            ("mixw", np.float64, (4, newcap, K)),
        ):
            old = getattr(self, name)
            new = np.zeros(shape, dtype=dtype)
            new[:, : self.cap] = old
            setattr(self, name, new)
        self.cap = newcap

    # -- views ----------------------------------------------------------------
    @property
    def time(self) -> float:
        return float(self.tarr[0])

    @property
    def se_queries_total(self) -> int:
        return int(self.qcnt[0])

    @property
    def se_queries_answered(self) -> int:
        return int(self.qcnt[1])

    @property
    def gai_queries_total(self) -> int:
        return int(self.qcnt[2])

    @property
    def gai_queries_answered(self) -> int:
        return int(self.qcnt[3])

    def count(self, compartment: str) -> int:
        """Coupons currently held, black included."""
        return int(self.nn[COMPARTMENTS.index(compartment)])

    def coupons(self, compartment: str) -> list[Coupon]:
        s = COMPARTMENTS.index(compartment)
        K = self.colors.n
        out = []
        for i in range(int(self.nn[s])):
            ci = int(self.col[s, i])
            if ci == -1:
                color = None
            elif ci >= 0:
                color = tuple(1.0 if j == ci else 0.0 for j in range(K))
            else:
                color = tuple(float(x) for x in self.mixw[s, i])
            out.append(Coupon(
                id=int(self.cid[s, i]),
                color=color,
                black=ci == -1,
                origin_flow=ORIGIN_NAMES[int(self.org[s, i])],
                ai_lineage=bool(self.lin[s, i]),
                birth_time=float(self.birth[s, i]),
            ))
        return out

    def snapshot(self) -> Snapshot:
        """Aggregate the current state (same scan as run snapshots)."""
        K = self.colors.n
        good = np.array(
            [1 if c in self.colors.good else 0 for c in self.colors.labels],
            dtype=np.uint8,
        )
        outs = _alloc_outputs(1, K)
        _k._snap_scan(0, self.col, self.org, self.lin, self.mixw, self.nn,
                      self.qcnt, good, outs["counts"], outs["lincnt"],
                      outs["goodm"], outs["used_s"], outs["used_a"],
                      outs["uclass"], outs["umass"], outs["scal"],
                      outs["queries"], outs["n"])
        rr = RunResult(grid=(self.time,), colors=self.colors, arrays=outs,
                       halted=False)
        return rr.snapshot(0)


def _alloc_outputs(G: int, K: int) -> dict:
    return {
        "counts": np.zeros((G, 4, K), dtype=np.int64),
        "lincnt": np.zeros((G, 4, K), dtype=np.int64),
        "goodm": np.zeros((G, 4, K), dtype=np.float64),
        "used_s": np.zeros((G, K), dtype=np.int64),
        "used_a": np.zeros((G, K), dtype=np.int64),
        "uclass": np.zeros((G, 4), dtype=np.int64),
        "umass": np.zeros((G, 2), dtype=np.float64),
        "scal": np.zeros((G, 4, 2), dtype=np.int64),
        "queries": np.zeros((G, 4), dtype=np.int64),
        "n": np.zeros((G, 4), dtype=np.int64),
    }


def build_initial_state(cfg: ScenarioConfig) -> SimState:
    """Time zero: every compartment empty except the black coupons seeded
    into the search engine."""
    require_valid(cfg)
    tables = _tables(cfg)
    state = SimState(cfg.colors, tables.cap0)
    b = int(cfg.black_init)
    if b:
        state.col[_k.S, :b] = -1
        state.org[_k.S, :b] = _k.ORG_BLACK
        state.cid[_k.S, :b] = np.arange(b)
        state.nn[_k.S] = b
        state.nblack[0] = b
        state.misc[0] = b
    return state


def event_channels(state: SimState, cfg: ScenarioConfig) -> list[EventChannel]:
    """Current rate of every event channel (zero-rate channels included)."""
    tables = _tables(cfg)
    _k._rates_probe(tables.par[0], state.nn, state._ratebuf)
    return [
        EventChannel(kind=kind, current_rate=float(r))
        for kind, r in zip(CHANNEL_KINDS, state._ratebuf)
    ]


def advance(state: SimState, cfg: ScenarioConfig, rng: SplitMix64) -> Optional[AppliedEvent]:
    """Sample the next event, apply it, and advance the clock.

    Returns None when the total rate is zero (absorbing state).
    """
    tables = _tables(cfg)
    while True:
        status, _ = _k._burst(
            state.col, state.org, state.lin, state.birth, state.cid,
            state.mixw, state.nn, state.qcnt, state.nblack, state.misc,
            *tables.par, rng.state, state.tarr, state._ratebuf, state._xb,
            state._pend, state._resume, state._lastkind, np.inf, 1,
        )
        if status == _k.OVERFLOW:
            state._grow()
            continue
        if status == _k.HALTED:
            return None
        return AppliedEvent(kind=CHANNEL_KINDS[int(state._lastkind[0])],
                            time=state.time)


def _draw_index(rng: SplitMix64, n: int) -> int:
    return int(rng.random() * n)


def apply_event(state: SimState, kind: str, cfg: ScenarioConfig, rng: SplitMix64) -> None:
    """Apply one event of the given channel without advancing the clock.

    This is the readable reference of the per-channel semantics. It mutates
    the same storage arrays as the compiled loop and consumes the random
    stream in the identical order, so a sequence of apply_event calls
    reproduces a compiled run draw for draw. The channel must be live in
    the current state (non-zero rate).
    """
    k = CHANNEL_KINDS.index(kind)
    tables = _tables(require_valid(cfg))
    pf, pi, acc, bias, denom, q, good, gcum = tables.par
    _k._rates_probe(pf, state.nn, state._ratebuf)
    if state._ratebuf[k] <= 0.0:
        raise ValueError(f"channel {kind!r} has zero rate in the current state")
    head = int(cfg.flows.T.w or 1) + 2
    while int(state.nn.max()) + head > state.cap:
        state._grow()

    K = cfg.colors.n
    nn = state.nn
    col, org, lin = state.col, state.org, state.lin
    mixw = state.mixw
    t = state.time

    def draw_color() -> int:
        u = rng.random()
        for c in range(K - 1):
            if u < gcum[c]:
                return c
        return K - 1

    def weights_of(s: int, i: int) -> tuple[float, ...]:
        ci = int(col[s, i])
        if ci >= 0:
            return tuple(1.0 if j == ci else 0.0 for j in range(K))
        return tuple(float(x) for x in mixw[s, i])

    def quality_of(x: Sequence[float]) -> float:
        return float(sum(w * qq for w, qq in zip(x, q)))

    def append(s: int, x_or_c, origin: int, lineage: int) -> None:
        n = int(nn[s])
        if isinstance(x_or_c, int):
            col[s, n] = x_or_c
        else:
            pure = [j for j, w in enumerate(x_or_c) if w == 1.0]
            if pure:
                col[s, n] = pure[0]
            else:
                col[s, n] = -2
                mixw[s, n, :] = x_or_c
        org[s, n] = origin
        lin[s, n] = lineage
        state.birth[s, n] = t
        state.cid[s, n] = int(state.misc[0])
        state.misc[0] += 1
        nn[s] = n + 1

    def accept(flow: int, x_or_c) -> bool:
        if isinstance(x_or_c, int):
            p = acc[flow, x_or_c]
        else:
            p = (quality_of(x_or_c) + bias[flow]) / denom[flow]
        return rng.random() < p

    W, T, S, L = 0, 1, 2, 3
    if k == _k.CH_POST_P:
        c = draw_color()
        if accept(_k.FL_P, c):
            append(W, c, _k.ORG_P, 0)

    elif k == _k.CH_CURATE_H:
        if rng.random() < pf[_k.PF_GAMMA]:
            c = draw_color()
            if accept(_k.FL_H, c):
                append(T, c, _k.ORG_H_FRESH, 0)
        elif nn[S] > 0:
            i = _draw_index(rng, int(nn[S]))
            if col[S, i] != -1:
                x = weights_of(S, i)
                if accept(_k.FL_H, x):
                    append(T, x, _k.ORG_H_FROM_SE, int(lin[S, i]))

    elif k == _k.CH_INDEX_I:
        i = _draw_index(rng, int(nn[W]))
        x = weights_of(W, i)
        if accept(_k.FL_I, x):
            append(S, x, _k.ORG_I, int(lin[W, i]))

    elif k == _k.CH_TRAIN_T:
        i = _draw_index(rng, int(nn[T]))
        x = weights_of(T, i)
        for _ in range(int(pi[_k.PI_W_COPIES])):
            append(L, x, _k.ORG_T_TRAIN, int(lin[T, i]))

    elif k == _k.CH_QUERY_S:
        state.qcnt[0] += 1
        i = _draw_index(rng, int(nn[S]))
        if col[S, i] == -1:
            return
        state.qcnt[1] += 1
        li = int(lin[S, i])
        x = weights_of(S, i)
        if int(pi[_k.PI_MIXMODE]) == 2:
            j = _draw_index(rng, int(nn[S]))
            if col[S, j] != -1:
                from .core import mix_human

                y = weights_of(S, j)
                x = mix_human(x, y, float(pf[_k.PF_XI]), cfg.colors)
                li = 1 if (li or lin[S, j]) else 0
        if accept(_k.FL_S, x):
            append(W, x, _k.ORG_S_USED, li)

    elif k == _k.CH_QUERY_A:
        state.qcnt[2] += 1
        nL = int(nn[L])
        pool = nL + int(nn[S])
        gated = bool(pi[_k.PI_GATE])

        def pooled_draw() -> tuple[int, int]:
            i = _draw_index(rng, pool)
            return (L, i) if i < nL else (S, i - nL)

        if gated:
            s1, i1 = pooled_draw()
            if col[s1, i1] == -1:
                return
        else:
            if pool - int(state.nblack[0]) <= 0:
                return
            while True:
                s1, i1 = pooled_draw()
                if col[s1, i1] != -1:
                    break
        state.qcnt[3] += 1
        li = int(lin[s1, i1])
        x = weights_of(s1, i1)
        if int(pi[_k.PI_MIXMODE]) >= 1:
            if gated:
                s2, i2 = pooled_draw()
            else:
                while True:
                    s2, i2 = pooled_draw()
                    if col[s2, i2] != -1:
                        break
            if col[s2, i2] != -1:
                from .core import mix_gai

                u = rng.random()
                x = mix_gai(x, weights_of(s2, i2), u)
                li = 1 if (li or lin[s2, i2]) else 0
        if rng.random() < pf[_k.PF_ALPHA]:
            if accept(_k.FL_A, x):
                append(W, x, _k.ORG_A_USED, 1)
        if rng.random() < pf[_k.PF_BETA]:
            if accept(_k.FL_F, x):
                append(L, x, _k.ORG_F_FEEDBACK, li)

    else:
        s = k - _k.CH_DEATH_W
        i = _draw_index(rng, int(nn[s]))
        n = int(nn[s]) - 1
        if s == S and col[s, i] == -1:
            state.nblack[0] -= 1
        if i != n:
            col[s, i] = col[s, n]
            org[s, i] = org[s, n]
            lin[s, i] = lin[s, n]
            state.birth[s, i] = state.birth[s, n]
            state.cid[s, i] = state.cid[s, n]
            if col[s, i] == -2:
                mixw[s, i, :] = mixw[s, n, :]
        nn[s] = n


class RunResult:
    """Snapshots of one run on its sample grid.

    The aggregates live in compact arrays (one leading grid axis); the
    ``snapshots`` view materializes them as :class:`Snapshot` objects.
    """

    def __init__(self, grid, colors: ColorSet, arrays: dict, halted: bool):
        self.grid = tuple(float(t) for t in grid)
        self.colors = colors
        self.arrays = arrays
        self.halted = halted

    def snapshot(self, i: int) -> Snapshot:
        a = self.arrays
        K = self.colors.n
        comps = {}
        for s, name in enumerate(COMPARTMENTS):
            is_w = s == _k.W
            comps[name] = CompartmentSnapshot(
                counts=tuple(int(x) for x in a["counts"][i, s]),
                lineage_counts=tuple(int(x) for x in a["lincnt"][i, s]),
                good_mass=tuple(float(x) for x in a["goodm"][i, s]),
                relevant=int(a["scal"][i, s, 0]),
                black=int(a["scal"][i, s, 1]),
                used_s_by_color=tuple(int(x) for x in a["used_s"][i]) if is_w else (0,) * K,
                used_a_by_color=tuple(int(x) for x in a["used_a"][i]) if is_w else (0,) * K,
                used_s_relevant=int(a["uclass"][i, 0]) if is_w else 0,
                used_s_irrelevant=int(a["uclass"][i, 1]) if is_w else 0,
                used_a_relevant=int(a["uclass"][i, 2]) if is_w else 0,
                used_a_irrelevant=int(a["uclass"][i, 3]) if is_w else 0,
                used_s_bad_mass=float(a["umass"][i, 0]) if is_w else 0.0,
                used_a_bad_mass=float(a["umass"][i, 1]) if is_w else 0.0,
            )
        return Snapshot(
            time=self.grid[i],
            compartments=comps,
            se_queries_total=int(a["queries"][i, 0]),
            se_queries_answered=int(a["queries"][i, 1]),
            gai_queries_total=int(a["queries"][i, 2]),
            gai_queries_answered=int(a["queries"][i, 3]),
        )

    @property
    def snapshots(self) -> list[Snapshot]:
        return [self.snapshot(i) for i in range(len(self.grid))]


def _check_grid(sample_grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(sample_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("sample grid must be a non-empty 1-d sequence")
    if grid[0] < 0.0 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("sample grid must be strictly increasing and start at >= 0")
    return grid


def run_single(cfg: ScenarioConfig, seed: int, sample_grid: Sequence[float]) -> RunResult:
    """One full run, deterministic in (cfg, seed)."""
    grid = _check_grid(sample_grid)
    tables = _tables(require_valid(cfg))
    state = build_initial_state(cfg)
    rs = np.array([seed & _M64], dtype=np.uint64)
    arrays = _alloc_outputs(grid.size, cfg.colors.n)
    gi = 0
    while True:
        status, gi = _k._run(
            state.col, state.org, state.lin, state.birth, state.cid,
            state.mixw, state.nn, state.qcnt, state.nblack, state.misc,
            *tables.par, rs, state.tarr, state._ratebuf, state._xb,
            state._pend, state._resume, state._lastkind, grid, gi,
            arrays["counts"], arrays["lincnt"], arrays["goodm"],
            arrays["used_s"], arrays["used_a"], arrays["uclass"],
            arrays["umass"], arrays["scal"], arrays["queries"], arrays["n"],
        )
        if status != _k.OVERFLOW:
            break
        state._grow()
    return RunResult(grid=grid, colors=cfg.colors, arrays=arrays,
                     halted=status == _k.HALTED)


# -- ensembles -----------------------------------------------------------------

_WORKER_CTX: dict = {}


def _init_worker(payload):
    import pickle

    cfg, master_seed, grid = pickle.loads(payload)
    _WORKER_CTX["cfg"] = cfg
    _WORKER_CTX["master_seed"] = master_seed
    _WORKER_CTX["grid"] = grid


def _run_indexed(idx: int):
    from . import metrics as _metrics

    cfg = _WORKER_CTX["cfg"]
    rr = run_single(cfg, seed_for(_WORKER_CTX["master_seed"], idx), _WORKER_CTX["grid"])
    return idx, _metrics.series_from_run(rr)


def run_ensemble(
    cfg: ScenarioConfig,
    master_seed: int,
    n_runs: int,
    sample_grid: Sequence[float],
    jobs: Optional[int] = None,
    on_run: Optional[Callable[[int, dict], None]] = None,
):
    """Independent runs seeded by :func:`seed_for`, reduced to per-grid
    metric statistics.

    Runs execute on ``jobs`` worker processes (default: all available
    cores); the reduction consumes results in run-index order so the output
    is independent of scheduling. ``on_run(index, series)`` is invoked in
    order for every run, e.g. to stream per-run metric rows to disk.
    """
    from . import metrics as _metrics

    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    grid = _check_grid(sample_grid)
    require_valid(cfg)
    if jobs is None or jobs <= 0:
        jobs = os.cpu_count() or 1
    jobs = min(jobs, n_runs)

    acc = _metrics.EnsembleAccumulator(grid)

    if jobs == 1:
        for idx in range(n_runs):
            rr = run_single(cfg, seed_for(master_seed, idx), grid)
            series = _metrics.series_from_run(rr)
            acc.add(series)
            if on_run is not None:
                on_run(idx, series)
    else:
        import multiprocessing as mp
        import pickle

        payload = pickle.dumps((cfg, master_seed, grid))
        ctx = mp.get_context("spawn")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(payload,)) as pool:
            pending: dict[int, dict] = {}
            expect = 0
            for idx, series in pool.imap_unordered(_run_indexed, range(n_runs)):
                pending[idx] = series
                while expect in pending:
                    s = pending.pop(expect)
                    acc.add(s)
                    if on_run is not None:
                        on_run(expect, s)
                    expect += 1
    return acc.finalize()


# -- snapshot construction from explicit coupons --------------------------------


def snapshot_from_coupons(
    colors: ColorSet,
    by_compartment: Mapping[str, Iterable[Coupon]],
    time: float = 0.0,
    se_queries: tuple[int, int] = (0, 0),
    gai_queries: tuple[int, int] = (0, 0),
) -> Snapshot:
    """Build a snapshot by aggregating explicit coupons.

    This is the readable counterpart of the kernel's snapshot scan, used to
    hand-build states in tests and to cross-check the compiled aggregation.
    """
    K = colors.n
    good_idx = set(colors.good_indices)
    comps = {}
    for name in COMPARTMENTS:
        counts = [0] * K
        lincnt = [0] * K
        goodm = [0.0] * K
        relevant = 0
        black = 0
        used_s = [0] * K
        used_a = [0] * K
        ucl = [0, 0, 0, 0]
        umass = [0.0, 0.0]
        for c in by_compartment.get(name, ()):
            if c.black:
                black += 1
                continue
            x = c.color
            assert x is not None
            dom = max(range(K), key=lambda i: (x[i], -i))
            counts[dom] += 1
            if c.ai_lineage:
                lincnt[dom] += 1
            bad_mass = sum(x[i] for i in range(K) if i not in good_idx)
            rel = classify_answer(x, colors) == "relevant"
            if rel:
                relevant += 1
                gs = sum(x[i] for i in good_idx)
                for i in good_idx:
                    goodm[i] += x[i] / gs
            if c.origin_flow == "S-used":
                used_s[dom] += 1
                umass[0] += bad_mass
                ucl[0 if rel else 1] += 1
            elif c.origin_flow == "A-used":
                used_a[dom] += 1
                umass[1] += bad_mass
                ucl[2 if rel else 3] += 1
        comps[name] = CompartmentSnapshot(
            counts=tuple(counts),
            lineage_counts=tuple(lincnt),
            good_mass=tuple(goodm),
            relevant=relevant,
            black=black,
            used_s_by_color=tuple(used_s),
            used_a_by_color=tuple(used_a),
            used_s_relevant=ucl[0],
            used_s_irrelevant=ucl[1],
            used_a_relevant=ucl[2],
            used_a_irrelevant=ucl[3],
            used_s_bad_mass=umass[0],
            used_a_bad_mass=umass[1],
        )
    return Snapshot(
        time=time,
        compartments=comps,
        se_queries_total=se_queries[0],
        se_queries_answered=se_queries[1],
        gai_queries_total=gai_queries[0],
        gai_queries_answered=gai_queries[1],
    )
