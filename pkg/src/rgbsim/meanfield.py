"""Deterministic mean-field trajectories of the coupon dynamics.

The expected coupon counts per color and compartment follow a coupled ODE
system: curation feeds the training set from fresh sources and the search
engine, posting and both repost loops feed the Web, training (with
multiplicity ``w``) and feedback feed the LLM, and indexing feeds the
search engine; every compartment decays at its expiry rate. The initial
black-coupon mass in the search engine decays exponentially and keeps the
selection-ratio denominators positive from time zero.

Used-answer masses in the Web are tracked per source flow so the fraction
of irrelevant used answers and the GAI responsibility index are available
along the trajectory. Autophagy needs replication lineage, which the
mean-field state does not carry; it is simulation-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .core import ColorSet, ScenarioConfig, acceptance_probability, require_valid
from .metrics import METRIC_NAMES


class IntegrationDivergedError(RuntimeError):
    def __init__(self, time: float):
        self.time = time
        super().__init__(f"integration produced non-finite values at t = {time}")


@dataclass(frozen=True)
class OdeState:
    """Mean coupon masses per color, plus black mass and used sub-accounts."""

    n_T: tuple[float, ...]
    n_W: tuple[float, ...]
    n_L: tuple[float, ...]
    n_S: tuple[float, ...]
    n_S_black: float
    used_s: tuple[float, ...]  # Web mass reposted from the search engine
    used_a: tuple[float, ...]  # Web mass reposted from the GAI

    @classmethod
    def initial(cls, cfg: ScenarioConfig) -> "OdeState":
        z = (0.0,) * cfg.colors.n
        return cls(n_T=z, n_W=z, n_L=z, n_S=z, n_S_black=float(cfg.black_init),
                   used_s=z, used_a=z)

    def pack(self) -> np.ndarray:
        return np.concatenate([
            self.n_T, self.n_W, self.n_L, self.n_S, [self.n_S_black],
            self.used_s, self.used_a,
        ])

    @classmethod
    def unpack(cls, y: np.ndarray, K: int) -> "OdeState":
        t = lambda a: tuple(float(x) for x in a)
        return cls(
            n_T=t(y[0:K]), n_W=t(y[K:2 * K]), n_L=t(y[2 * K:3 * K]),
            n_S=t(y[3 * K:4 * K]), n_S_black=float(y[4 * K]),
            used_s=t(y[4 * K + 1:5 * K + 1]), used_a=t(y[5 * K + 1:6 * K + 1]),
        )


@dataclass(frozen=True)
class OdeParams:
    config: ScenarioConfig
    dt: float = 0.01
    horizon: float = 1000.0

    def __post_init__(self):
        require_valid(self.config)
        if self.config.mixing.mode != "none":
            raise ValueError("mean-field dynamics are defined for mixing mode 'none' only")
        if not (self.dt > 0.0):
            raise ValueError(f"dt = {self.dt!r} must be > 0")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")


@dataclass(frozen=True)
class OdeTrajectory:
    grid: tuple[float, ...]
    states: tuple[OdeState, ...]


def _ratio_tables(cfg: ScenarioConfig):
    colors = cfg.colors
    K = colors.n

    def row(bias: Optional[float]) -> np.ndarray:
        if bias is None:
            return np.ones(K)
        return np.array([
            acceptance_probability(q, bias, colors) for q in colors.qualities
        ])

    f = cfg.flows
    return (row(f.P.bias), row(f.H.bias), row(f.I.bias), row(f.S.bias),
            row(f.A.bias), row(f.F.bias))


@njit(cache=True)
def _deriv(y, dy, K, lam_p, lam_h, lam_i, lam_t, lam_sp, lam_ap, lam_f,
           gamma, w, mu_w, mu_t, mu_s, mu_l, r_p, r_h, r_i, r_s, r_a, r_f, g):
    o_t, o_w, o_l, o_s = 0, K, 2 * K, 3 * K
    o_b = 4 * K
    o_us, o_ua = 4 * K + 1, 5 * K + 1

    s_total = y[o_b]
    a_total = y[o_b]
    for c in range(K):
        s_total += y[o_s + c]
        a_total += y[o_s + c] + y[o_l + c]

    dy[o_b] = -mu_s * y[o_b]
    for c in range(K):
        q_s = y[o_s + c] / s_total if s_total > 0.0 else 0.0
        q_a = (y[o_l + c] + y[o_s + c]) / a_total if a_total > 0.0 else 0.0
        in_s = q_s * lam_sp * r_s[c]
        in_a = q_a * lam_ap * r_a[c]
        dy[o_t + c] = lam_h * r_h[c] * (gamma * g[c] + (1.0 - gamma) * q_s) \
            - mu_t * y[o_t + c]
        dy[o_w + c] = lam_p * r_p[c] * g[c] - mu_w * y[o_w + c] + in_s + in_a
        dy[o_l + c] = y[o_t + c] * w * lam_t - mu_l * y[o_l + c] \
            + q_a * lam_f * r_f[c]
        dy[o_s + c] = y[o_w + c] * lam_i * r_i[c] - mu_s * y[o_s + c]
        dy[o_us + c] = in_s - mu_w * y[o_us + c]
        dy[o_ua + c] = in_a - mu_w * y[o_ua + c]


@njit(cache=True)
def _rk4(y, grid, dt, out, K, lam_p, lam_h, lam_i, lam_t, lam_sp, lam_ap,
         lam_f, gamma, w, mu_w, mu_t, mu_s, mu_l, r_p, r_h, r_i, r_s, r_a,
         r_f, g):
    n = y.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    yt = np.empty(n)
    t = 0.0
    for gi in range(grid.shape[0]):
        target = grid[gi]
        while target - t > 1e-12:
            h = dt if dt <= target - t else target - t
            _deriv(y, k1, K, lam_p, lam_h, lam_i, lam_t, lam_sp, lam_ap,
                   lam_f, gamma, w, mu_w, mu_t, mu_s, mu_l, r_p, r_h, r_i,
                   r_s, r_a, r_f, g)
            for i in range(n):
                yt[i] = y[i] + 0.5 * h * k1[i]
            _deriv(yt, k2, K, lam_p, lam_h, lam_i, lam_t, lam_sp, lam_ap,
                   lam_f, gamma, w, mu_w, mu_t, mu_s, mu_l, r_p, r_h, r_i,
                   r_s, r_a, r_f, g)
            for i in range(n):
                yt[i] = y[i] + 0.5 * h * k2[i]
            _deriv(yt, k3, K, lam_p, lam_h, lam_i, lam_t, lam_sp, lam_ap,
                   lam_f, gamma, w, mu_w, mu_t, mu_s, mu_l, r_p, r_h, r_i,
                   r_s, r_a, r_f, g)
            for i in range(n):
                yt[i] = y[i] + h * k3[i]
            _deriv(yt, k4, K, lam_p, lam_h, lam_i, lam_t, lam_sp, lam_ap,
                   lam_f, gamma, w, mu_w, mu_t, mu_s, mu_l, r_p, r_h, r_i,
                   r_s, r_a, r_f, g)
            bad = False
            for i in range(n):
                y[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if y[i] < 0.0:
                    # round-off clamp; an excursion beyond round-off scale
                    # means the step size cannot resolve the dynamics
                    if y[i] < -1e-6:
                        bad = True
                    y[i] = 0.0
                if not np.isfinite(y[i]):
                    bad = True
            if bad:
                return gi
            t += h
        for i in range(n):
            out[gi, i] = y[i]
    return -1


def _kernel_args(cfg: ScenarioConfig):
    f = cfg.flows
    r_p, r_h, r_i, r_s, r_a, r_f = _ratio_tables(cfg)
    return (
        float(f.P.rate), float(f.H.rate), float(f.I.rate), float(f.T.rate),
        float(f.S.rate), float(f.A.rate), float(f.F.rate),
        float(f.H.gamma or 0.0), float(f.T.w or 1), float(cfg.mu_W),
        float(cfg.mu_T), float(cfg.mu_S), float(cfg.mu_L),
        r_p, r_h, r_i, r_s, r_a, r_f,
        np.array(cfg.generator, dtype=np.float64),
    )


def derivatives(state: OdeState, params: OdeParams) -> OdeState:
    """Instantaneous rate of change, in the same shape as the state."""
    cfg = params.config
    K = cfg.colors.n
    y = state.pack()
    dy = np.empty_like(y)
    _deriv(y, dy, K, *_kernel_args(cfg))
    return OdeState.unpack(dy, K)


def integrate(params: OdeParams, sample_grid: Optional[Sequence[float]] = None) -> OdeTrajectory:
    """Classical fixed-step 4th-order integration from the empty start.

    Samples the trajectory at ``sample_grid`` (default: daily steps up to
    the horizon). Steps never straddle a grid time; the last step of each
    interval is shortened to land exactly. Raises
    :class:`IntegrationDivergedError` if the state leaves the finite range.
    """
    cfg = params.config
    K = cfg.colors.n
    if sample_grid is None:
        grid = np.arange(0.0, params.horizon + 0.5 * params.dt, 1.0)
    else:
        grid = np.asarray(sample_grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("sample grid must be a non-empty 1-d sequence")
        if grid[0] < 0.0 or np.any(np.diff(grid) <= 0.0):
            raise ValueError("sample grid must be strictly increasing and start at >= 0")
    y = OdeState.initial(cfg).pack()
    out = np.empty((grid.size, y.size))
    bad = _rk4(y, grid, float(params.dt), out, K, *_kernel_args(cfg))
    if bad >= 0:
        raise IntegrationDivergedError(float(grid[bad]))
    states = tuple(OdeState.unpack(out[i], K) for i in range(grid.size))
    return OdeTrajectory(grid=tuple(float(t) for t in grid), states=states)


def ode_metrics(trajectory: OdeTrajectory, colors: ColorSet) -> dict[str, list[Optional[float]]]:
    """Accuracy, diversity, FIUA and AIRI along a mean-field trajectory.

    Ratios over zero mass are None (undefined), matching the simulation
    metrics. Query-based and lineage-based metrics have no mean-field
    counterpart and are omitted.
    """
    if not trajectory.states:
        raise ValueError("empty trajectory")
    good = colors.good_indices
    bad = colors.bad_indices
    from .core import ideal_good_distribution

    ideal = ideal_good_distribution(colors)
    out: dict[str, list[Optional[float]]] = {
        m: [] for m in METRIC_NAMES
        if not m.startswith("frq") and m not in ("aiai", "majority_irrelevant")
    }

    def push_compartment(comp: str, masses: tuple[float, ...]) -> None:
        total = sum(masses)
        good_total = sum(masses[i] for i in good)
        out[f"pi_{comp}"].append(good_total / total if total > 0 else None)
        if good_total > 0:
            tv = sum(abs(ideal[colors.labels[i]] - masses[i] / good_total) for i in good)
            out[f"rho_{comp}"].append(1.0 - 0.5 * tv)
        else:
            out[f"rho_{comp}"].append(None)

    for st in trajectory.states:
        push_compartment("W", st.n_W)
        push_compartment("T", st.n_T)
        push_compartment("S", st.n_S)
        push_compartment("L", st.n_L)
        push_compartment("A", tuple(a + b for a, b in zip(st.n_S, st.n_L)))
        used_tot = sum(st.used_s) + sum(st.used_a)
        used_irr = sum(st.used_s[i] + st.used_a[i] for i in bad)
        out["fiua"].append(used_irr / used_tot if used_tot > 0 else None)
        irr_a = sum(st.used_a[i] for i in bad)
        out["airi"].append(irr_a / used_irr if used_irr > 0 else None)
        out["fiua_mass"].append(used_irr / used_tot if used_tot > 0 else None)
        out["airi_mass"].append(irr_a / used_irr if used_irr > 0 else None)
        out["count_W"].append(sum(st.n_W))
        out["count_T"].append(sum(st.n_T))
        out["count_S"].append(sum(st.n_S))
        out["count_L"].append(sum(st.n_L))
        out["black_S"].append(st.n_S_black)
    return out
