import math
from dataclasses import replace

import pytest

from rgbsim import meanfield
from rgbsim.core import MixingCondition
from rgbsim.meanfield import (
    IntegrationDivergedError,
    OdeParams,
    OdeState,
    derivatives,
    integrate,
    ode_metrics,
)
from rgbsim.scenario import preset

GAI = preset("gai")


def feedback_off(cfg):
    f = cfg.flows
    return replace(cfg, flows=replace(
        f, S=replace(f.S, rate=0.0), A=replace(f.A, rate=0.0),
        F=replace(f.F, rate=0.0)))


# -- derivatives -------------------------------------------------------------------


def test_derivatives_at_the_black_only_start():
    params = OdeParams(config=GAI, horizon=10.0)
    d = derivatives(OdeState.initial(GAI), params)
    # black mass decays at mu_S, nothing else is present yet
    assert d.n_S_black == pytest.approx(-1.0)
    assert d.n_S == pytest.approx((0.0, 0.0, 0.0))
    assert d.n_L == pytest.approx((0.0, 0.0, 0.0))
    assert d.used_s == pytest.approx((0.0, 0.0, 0.0))
    assert d.used_a == pytest.approx((0.0, 0.0, 0.0))
    # source terms: posting into the Web, fresh curation into the training set
    r_p = (1.5 / 4.0, 1.4 / 4.0, 1.1 / 4.0)
    r_h = (0.42 / 0.76, 0.32 / 0.76, 0.02 / 0.76)
    for c in range(3):
        assert d.n_W[c] == pytest.approx(1.0 * r_p[c] / 3.0)
        assert d.n_T[c] == pytest.approx(0.1 * r_h[c] * 0.5 / 3.0)


def test_derivatives_without_feedback_terms_in_pre_gai():
    cfg = preset("pre-gai")
    params = OdeParams(config=cfg, horizon=10.0)
    state = OdeState(n_T=(1.0, 2.0, 0.5), n_W=(3.0, 1.0, 1.0),
                     n_L=(4.0, 0.0, 1.0), n_S=(2.0, 2.0, 1.0),
                     n_S_black=1.0, used_s=(0.1, 0.1, 0.0),
                     used_a=(0.0, 0.0, 0.0))
    d = derivatives(state, params)
    w = cfg.flows.T.w
    for c in range(3):
        expected = state.n_T[c] * w * cfg.flows.T.rate - cfg.mu_L * state.n_L[c]
        assert d.n_L[c] == pytest.approx(expected)  # training only, no feedback
        assert d.used_a[c] == pytest.approx(0.0)


# -- integration accuracy -------------------------------------------------------------


def test_black_mass_decays_exponentially():
    traj = integrate(OdeParams(config=GAI, dt=0.01, horizon=100.0))
    worst = max(abs(st.n_S_black - 10.0 * math.exp(-0.1 * t))
                for t, st in zip(traj.grid, traj.states))
    assert worst < 1e-6
    ten = traj.states[traj.grid.index(10.0)]
    assert ten.n_S_black == pytest.approx(10.0 / math.e, abs=1e-6)


def test_web_and_index_match_linear_closed_forms_without_feedback():
    cfg = feedback_off(GAI)
    traj = integrate(OdeParams(config=cfg, dt=0.01, horizon=1000.0))
    r_p = (1.5 / 4.0, 1.4 / 4.0, 1.1 / 4.0)
    mu_w, mu_s, lam_i = cfg.mu_W, cfg.mu_S, cfg.flows.I.rate
    for t in (10.0, 100.0, 1000.0):
        st = traj.states[traj.grid.index(t)]
        for c, q_c in enumerate(cfg.colors.qualities):
            a = 1.0 * r_p[c] / 3.0 / mu_w  # stationary Web mass
            w_exact = a * (1.0 - math.exp(-mu_w * t))
            assert st.n_W[c] == pytest.approx(w_exact, rel=1e-6)
            # indexing inherits the Web transient: two-exponential closed form
            ci = lam_i * q_c  # flow-I acceptance equals the quality at zero bias
            s_exact = (ci * a / mu_s) * (1.0 - math.exp(-mu_s * t)) \
                - ci * a * (math.exp(-mu_w * t) - math.exp(-mu_s * t)) / (mu_s - mu_w)
            assert st.n_S[c] == pytest.approx(s_exact, rel=1e-6)
    last = traj.states[-1]
    assert sum(last.n_W) == pytest.approx(
        (1.0 / 3.0) / mu_w * (1 - math.exp(-mu_w * 1000.0)), rel=1e-6)
    assert last.n_W[0] == pytest.approx(12.5, rel=1e-3)  # stationary blue mass


def test_step_halving_changes_nothing_measurable():
    coarse = integrate(OdeParams(config=GAI, dt=0.02, horizon=100.0))
    fine = integrate(OdeParams(config=GAI, dt=0.01, horizon=100.0))
    a = coarse.states[-1]
    b = fine.states[-1]
    assert sum(a.n_W) == pytest.approx(sum(b.n_W), rel=1e-6)
    assert sum(a.n_S) == pytest.approx(sum(b.n_S), rel=1e-6)


def test_totals_stabilize_at_the_horizon():
    traj = integrate(OdeParams(config=GAI, dt=0.01, horizon=1000.0))
    at = {t: traj.states[traj.grid.index(t)] for t in (900.0, 1000.0)}
    # W and S relax within 100 days; T carries a 1000-day expiry scale and
    # L rides on T, so those two need a ten-fold horizon for the same check
    for field in ("n_W", "n_S"):
        a = sum(getattr(at[900.0], field))
        b = sum(getattr(at[1000.0], field))
        assert abs(b - a) / b < 1e-3
    slow = integrate(OdeParams(config=GAI, dt=0.01, horizon=10_000.0),
                     sample_grid=[9000.0, 10_000.0])
    for field in ("n_T", "n_L", "n_W", "n_S"):
        a = sum(getattr(slow.states[0], field))
        b = sum(getattr(slow.states[1], field))
        assert abs(b - a) / b < 1e-3


def test_trajectories_stay_nonnegative():
    traj = integrate(OdeParams(config=preset("post-gai"), dt=0.01, horizon=300.0))
    for st in traj.states:
        for field in ("n_T", "n_W", "n_L", "n_S", "used_s", "used_a"):
            assert all(v >= 0.0 for v in getattr(st, field))
        assert st.n_S_black >= 0.0
        # used answers are a sub-population of the Web
        for c in range(3):
            assert st.used_s[c] + st.used_a[c] <= st.n_W[c] + 1e-9


def test_divergence_is_reported_with_its_time():
    cfg = replace(GAI, mu_W=1e9)  # absurd stiffness blows up the fixed step
    with pytest.raises(IntegrationDivergedError) as err:
        integrate(OdeParams(config=cfg, dt=0.01, horizon=10.0))
    assert err.value.time >= 0.0


def test_rejects_mixing_and_bad_grids():
    mixed = replace(GAI, mixing=MixingCondition(mode="gai_only"))
    with pytest.raises(ValueError, match="mixing"):
        OdeParams(config=mixed, horizon=10.0)
    with pytest.raises(ValueError):
        OdeParams(config=GAI, dt=0.0, horizon=10.0)
    with pytest.raises(ValueError):
        integrate(OdeParams(config=GAI, horizon=10.0), sample_grid=[3.0, 1.0])


# -- trajectory metrics -----------------------------------------------------------------


def test_ode_metrics_start_undefined():
    traj = integrate(OdeParams(config=GAI, dt=0.01, horizon=5.0),
                     sample_grid=[0.0, 5.0])
    series = ode_metrics(traj, GAI.colors)
    assert series["fiua"][0] is None
    assert series["pi_W"][0] is None
    assert series["fiua"][1] is not None
    assert "aiai" not in series  # lineage needs the stochastic engine
    assert "frq_se" not in series


def test_ode_metrics_hand_built_ratios():
    state = OdeState(n_T=(0.0,) * 3, n_W=(3.0, 1.0, 1.0), n_L=(0.0,) * 3,
                     n_S=(0.0,) * 3, n_S_black=0.0,
                     used_s=(4.0, 0.0, 1.0), used_a=(0.0, 0.0, 0.0))
    traj = meanfield.OdeTrajectory(grid=(1.0,), states=(state,))
    series = ode_metrics(traj, GAI.colors)
    assert series["fiua"][0] == pytest.approx(0.2)
    assert series["airi"][0] == pytest.approx(0.0)
    assert series["pi_W"][0] == pytest.approx(0.8)
    assert series["count_W"][0] == pytest.approx(5.0)


def test_ode_metrics_empty_trajectory_rejected():
    with pytest.raises(ValueError):
        ode_metrics(meanfield.OdeTrajectory(grid=(), states=()), GAI.colors)
