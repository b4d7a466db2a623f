import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from kzq import ef_core
from kzq.ef_core import ScalingParams
from kzq.errors import DivergenceError, RegimeError, RootNotFoundError, SingularityError
from kzq.quench import QuenchProtocol

# eta=2, delta_0=3 gives alpha = 3
UNIT = ScalingParams(eta=2.0, delta_0=3.0, tau_0=1.0)


# -- scalar chain --------------------------------------------------------------


def test_alpha_beta_definitions():
    p = ScalingParams(eta=2.0, delta_0=3.0, a_0=0.5, xi_0=2.0, tau_0=1.5, c_n=2.0, kappa_n=0.5)
    assert p.alpha == pytest.approx(3.0)
    assert p.beta == pytest.approx(4 * 0.5**3 * 2.0 * 3.0 / math.sqrt(3.0))
    assert p.gamma == pytest.approx(1.0 / 3.0)
    assert ScalingParams(eta=4.0).tau_0 == 0.5


def test_relaxation_time_unit_example():
    assert ef_core.relaxation_time(UNIT, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert ef_core.relaxation_time(UNIT, -1.0) == pytest.approx(1.0, rel=1e-15)


def test_relaxation_time_small_eps_divergence():
    for e in (1e-6, 1e-9, 1e-12):
        assert ef_core.relaxation_time(UNIT, e) == pytest.approx(2.0 / (3.0 * e), rel=1e-5)
    with pytest.raises(DivergenceError):
        ef_core.relaxation_time(UNIT, 0.0)


def test_relaxation_time_large_alpha():
    # alpha = 1e6: exact value 1/(sqrt(1e6 + 1) - 1); the sqrt asymptote
    # 1e-3 sits 1/sqrt(alpha) = 1e-3 (relative) below it
    p = ScalingParams(eta=2e-3, delta_0=1.0, tau_0=1.0)
    tau = ef_core.relaxation_time(p, 1.0)
    assert tau == pytest.approx(1.0 / (math.sqrt(1e6 + 1) - 1.0), rel=1e-12)
    assert abs(tau / 1e-3 - 1.0) == pytest.approx(1e-3, rel=1e-3)
    p7 = ScalingParams(eta=2e-3 / math.sqrt(10), delta_0=1.0, tau_0=1.0)
    assert ef_core.relaxation_time(p7, 1.0) == pytest.approx(1e7**-0.5, rel=1e-3)


def test_relaxation_time_vectorised():
    eps = np.array([0.5, 1.0, 2.0])
    out = ef_core.relaxation_time(UNIT, eps)
    assert out.shape == (3,)
    assert out[1] == pytest.approx(1.0)


def test_lifetime_scaling():
    assert ef_core.lifetime_tau_n(UNIT, 1.0) == ef_core.relaxation_time(UNIT, 1.0)
    assert ef_core.lifetime_tau_n(UNIT.replace(c_n=5.0), 1.0) == pytest.approx(5.0)


def test_propagation_velocity_unit():
    assert ef_core.propagation_velocity(UNIT, 1.0) == pytest.approx(1.0, rel=1e-15)
    x = 0.7
    direct = UNIT.kappa_n * ef_core.correlation_length(UNIT, x) / ef_core.lifetime_tau_n(UNIT, x)
    assert ef_core.propagation_velocity(UNIT, x) == pytest.approx(direct, rel=1e-14)


def test_propagation_velocity_overdamped_limit():
    p = ScalingParams(eta=10.0)
    assert ef_core.propagation_velocity(p, 0.0) == 0.0
    r = ef_core.propagation_velocity(p, 4e-6) / ef_core.propagation_velocity(p, 1e-6)
    assert r == pytest.approx(2.0, rel=1e-6)
    # underdamped: v_p -> gamma sqrt(alpha)
    q = ScalingParams(eta=1e-3)
    assert ef_core.propagation_velocity(q, 1e3) == pytest.approx(q.gamma * math.sqrt(q.alpha), rel=1e-3)


def test_correlation_length():
    assert ef_core.correlation_length(UNIT, 4.0) == 0.5
    with pytest.raises(DivergenceError):
        ef_core.correlation_length(UNIT, 0.0)


def test_lifetime_constant_formula():
    m, w, kT, A, g, n, eta = 1.0, 2.0, 0.5, 0.3, 1.5, 10, 0.2
    z = 8 * kT * A
    want = math.exp(m * w**4 / z) * z * g * math.sqrt(w) / (n * m * eta**3)
    assert ef_core.lifetime_constant(m, w, kT, A, g, n, eta) == pytest.approx(want, rel=1e-14)


# -- freeze-out ---------------------------------------------------------------


def test_freeze_out_exact_power_laws(monkeypatch):
    tau1 = 0.3
    lin = QuenchProtocol("linear", 50.0)
    monkeypatch.setattr(ef_core, "relaxation_time", lambda p, e: tau1 / abs(e) ** 0.5)
    t = ef_core.kzm_freeze_out(UNIT, lin)
    assert t == pytest.approx((tau1**2 * 50.0) ** (1 / 3), rel=1e-12)
    t16 = ef_core.kzm_freeze_out(UNIT, lin.with_tau_q(800.0))
    assert t16 / t == pytest.approx(16 ** (1 / 3), rel=1e-12)
    monkeypatch.setattr(ef_core, "relaxation_time", lambda p, e: tau1 / abs(e))
    t = ef_core.kzm_freeze_out(UNIT, lin)
    assert t == pytest.approx((tau1 * 50.0) ** 0.5, rel=1e-12)


def test_freeze_out_underdamped_asymptote():
    p = ScalingParams(eta=2e-4, delta_0=1.0, tau_0=1.0)  # alpha = 1e8
    tau1 = p.tau_0 / math.sqrt(p.alpha)
    t = ef_core.kzm_freeze_out(p, QuenchProtocol("linear", 1.0))
    assert t == pytest.approx((tau1**2 * 1.0) ** (1 / 3), rel=1e-2)
    t16 = ef_core.kzm_freeze_out(p, QuenchProtocol("linear", 16.0))
    assert t16 / t == pytest.approx(16 ** (1 / 3), rel=1e-2)


def test_freeze_out_overdamped_asymptote():
    p = ScalingParams(eta=10.0)
    tau1 = 2 * p.c_n * p.tau_0 / p.alpha
    t = ef_core.kzm_freeze_out(p, QuenchProtocol("linear", 1e4))
    assert t == pytest.approx((tau1 * 1e4) ** 0.5, rel=1e-2)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-2, 1e2), st.sampled_from([0.5, 1.0, 2.0, 3.0]), st.floats(1e-2, 1e6),
       st.floats(0.0, 2.0))
def test_root_residual(eta, r, tau_q, a0):
    p = ScalingParams(eta=eta, a_0=a0)
    pr = QuenchProtocol("power_law", tau_q, r=r)
    try:
        t = ef_core.kzm_freeze_out(p, pr)
    except RootNotFoundError:
        return
    assert abs(t - ef_core.lifetime_tau_n(p, pr.epsilon(t))) / t < 1e-10


def test_root_not_found_reports_bracket():
    # never crosses: epsilon stays negative
    pr = QuenchProtocol("tabulated", 1.0, samples=((0.0, -1.0), (5.0, -0.5)))
    with pytest.raises(RootNotFoundError) as e:
        ef_core.crossing_time(pr)
    assert e.value.bracket is not None


def test_crossing_time_offset():
    pr = QuenchProtocol("linear", 4.0, offset=0.5)
    assert ef_core.crossing_time(pr) == pytest.approx(2.0, rel=1e-12)


def test_continuous_medium_is_kzm():
    fo = ef_core.freeze_out_time(ScalingParams(eta=3.0, a_0=0.0), QuenchProtocol("linear", 77.0))
    assert fo.t_hat_n == fo.t_hat


def test_beta_one_halves_freeze_out():
    p = ScalingParams(a_0=0.5, eta=1.0, delta_0=1.0, tau_0=2.0)
    assert p.beta == pytest.approx(1.0, rel=1e-14)
    fo = ef_core.freeze_out_time(p, QuenchProtocol("linear", 1.0))
    assert fo.t_hat_n == pytest.approx(fo.t_hat / 2, rel=1e-14)


@pytest.mark.parametrize("ratio", [1e2, 1e4, 1e6])
def test_slow_quench_gap_bound(ratio):
    p = ScalingParams(eta=10.0, a_0=1.0)
    fo = ef_core.freeze_out_time(p, QuenchProtocol("linear", ratio * p.beta))
    gap = (fo.t_hat - fo.t_hat_n) / fo.t_hat
    assert 0 < gap <= math.sqrt(1 / ratio)


# -- domain length -------------------------------------------------------------


def test_xi_hat_underdamped_exponent():
    p = ScalingParams(eta=1e-5, a_0=0.0)
    taus = np.logspace(3, 5, 9) * p.tau_1
    assert {ef_core.regime_classify(p, t) for t in taus} == {"underdamped"}
    xs = [ef_core.xi_hat(p, QuenchProtocol("linear", t)) for t in taus]
    slope = np.polyfit(np.log(taus), np.log(xs), 1)[0]
    assert slope == pytest.approx(1 / 3, abs=0.02)


def test_xi_hat_constant_velocity(monkeypatch):
    p = ScalingParams(eta=2.0, a_0=0.3)
    pr = QuenchProtocol("linear", 40.0)
    fo = ef_core.freeze_out_time(p, pr)
    monkeypatch.setattr(ef_core, "propagation_velocity", lambda params, eps: 2.5)
    assert ef_core.xi_hat(p, pr, fo) == pytest.approx(2.5 * fo.t_hat_n, rel=1e-12)


def test_xi_hat_monotone_in_tau_q():
    p = ScalingParams(eta=10.0, a_0=1.0)
    xs = [ef_core.xi_hat(p, QuenchProtocol("linear", t)) for t in np.logspace(2, 7, 24)]
    assert np.all(np.diff(xs) >= 0)


# -- oscillating drive -------------------------------------------------------------

OVERDAMPED = ScalingParams(eta=1e4, delta_0=1.0)
C = ef_core.overdamped_lifetime_constant(OVERDAMPED)


def test_lifetime_constant_is_c_n_eta():
    assert C == pytest.approx(OVERDAMPED.c_n * OVERDAMPED.eta)


@pytest.mark.parametrize("f,omega", [(1.1, 1e-4), (2.0, 5e-5), (4.0, 2e-5), (8.0, 1e-6)])
def test_closed_form_matches_quadrature(f, omega):
    pr = QuenchProtocol("osc_sin2", 1.0, lam=f * C, omega=omega)
    quad = ef_core.xi_hat(OVERDAMPED, pr)
    closed = ef_core.xi_oscillation_closed_form(OVERDAMPED, f * C, omega)
    assert quad == pytest.approx(closed, rel=1e-6)


def test_closed_form_boundary():
    xi = ef_core.xi_oscillation_closed_form(OVERDAMPED, C, 1e-4)
    s1 = special.fresnel(1.0)[0]
    want = math.sqrt(C) * math.sqrt(2 * math.pi) * s1 / (C * math.sqrt(1e-4))
    assert xi == pytest.approx(want, rel=1e-14)


def test_closed_form_below_threshold():
    assert ef_core.xi_oscillation_closed_form(OVERDAMPED, 0.999 * C, 1e-4) is None
    est = ef_core.defect_density(OVERDAMPED, QuenchProtocol("osc_sin2", 1.0, lam=0.5 * C, omega=1e-4))
    assert est.no_defects and est.count == 0.0


def test_closed_form_omega_scaling():
    a = ef_core.xi_oscillation_closed_form(OVERDAMPED, 2 * C, 1e-5)
    b = ef_core.xi_oscillation_closed_form(OVERDAMPED, 2 * C, 4e-5)
    assert b == pytest.approx(a / 2, rel=1e-14)


def test_closed_form_regime_error():
    with pytest.raises(RegimeError):
        ef_core.xi_oscillation_closed_form(ScalingParams(eta=1.0), 10.0, 1.0)
    with pytest.raises(ValueError):
        ef_core.xi_oscillation_closed_form(OVERDAMPED, -1.0, 1.0)


def test_fresnel_against_mpmath():
    for x in (0.1, 0.5, 1.0, 1.7):
        assert special.fresnel(x)[0] == pytest.approx(float(mpmath.fresnels(x)), rel=1e-13)


def test_sin2_over_u_maximum():
    u = float(mpmath.findroot(lambda u: mpmath.tan(u) - 2 * u, 1.17))
    assert ef_core.SIN2_OVER_U_MAX == pytest.approx(math.sin(u) ** 2 / u, rel=1e-14)


# -- harmonic chain equation -----------------------------------------------------


def test_rhs_without_coupling_is_first_term():
    p = ScalingParams(eta=1.0, a_0=0.5, length=1e6)
    tq = 30.0
    vp = math.sqrt(p.alpha) * p.gamma
    v_eval = 0.6 * vp
    xi = ef_core.solve_inhomogeneous_xi(p, tq, v_eval, chi=0.0, rtol=1e-11)
    ag2 = p.alpha * p.gamma**2

    def f(v):
        return 2 * v * tq * (-4 * v * p.gamma**2 * (v * v + ag2) / (ag2 - v * v) ** 3)

    ref, _ = integrate.quad(f, 1e-6 * vp, v_eval, epsabs=0, epsrel=1e-12)
    assert xi == pytest.approx(abs(ref), rel=1e-7)


def test_rhs_continuity_at_chain_length():
    p = ScalingParams(eta=1.0, a_0=0.5)
    tq, v = 5.0, 0.3
    ag2 = p.alpha * p.gamma**2
    first = -4 * v * p.gamma**2 * (v * v + ag2) / (ag2 - v * v) ** 3
    at_l = ef_core.inhomogeneous_rhs(p, tq, v, p.length)
    assert at_l == pytest.approx(first * 2 * v * tq, rel=1e-14)
    near = ef_core.inhomogeneous_rhs(p, tq, v, p.length * (1 - 1e-9))
    assert near == pytest.approx(at_l, rel=1e-6)


def test_pole_raises():
    p = ScalingParams(eta=1.0, a_0=0.5)
    vp = math.sqrt(p.alpha) * p.gamma
    with pytest.raises(SingularityError):
        ef_core.solve_inhomogeneous_xi(p, 1.0, vp)


def test_clamped_at_chain_length():
    p = ScalingParams(eta=1.0, a_0=0.5, length=1e-3)
    vp = math.sqrt(p.alpha) * p.gamma
    xi, info = ef_core.solve_inhomogeneous_xi(p, 1e3, 0.9 * vp, chi=0.0, return_info=True)
    assert xi == p.length and info["clamped"]


def test_below_start_is_zero():
    p = ScalingParams(eta=1.0, a_0=0.5)
    assert ef_core.solve_inhomogeneous_xi(p, 1.0, 1e-12) == 0.0


def test_lsoda_agrees_with_radau():
    p = ScalingParams(eta=1.0, a_0=0.36459090326181576, length=9.118792848118705)
    vp = math.sqrt(p.alpha) * p.gamma
    a = ef_core.solve_inhomogeneous_xi(p, 10.0, 0.5 * vp)
    b = ef_core.solve_inhomogeneous_xi(p, 10.0, 0.5 * vp, method="Radau")
    assert a == pytest.approx(b, rel=1e-6)


def test_harmonic_chain_geometry():
    ch = ef_core.HarmonicChain.from_trap(9, 1.0)
    x = np.array(ch.positions)
    assert x == pytest.approx(-x[::-1], abs=1e-10)
    a = ch.spacings
    assert np.argmin(a) == 4  # densest at the centre
    sh = ch.omega_c2_shifts()
    assert sh[4] == pytest.approx(0.0, abs=1e-12) and np.all(sh >= -1e-12)


def test_harmonic_density_smooth():
    params = ScalingParams(eta=1.0, a_0=0.36459090326181576, length=9.118792848118705)
    ch = ef_core.HarmonicChain.from_trap(22, 1.0)
    taus = np.logspace(-1, 1, 41)
    d = [ef_core.defect_density(params, QuenchProtocol("linear", t), ch).density for t in taus]
    slope = np.gradient(np.log(d), np.log(taus))
    assert np.max(np.abs(np.diff(slope))) < 0.5
    est = ef_core.defect_density(params, QuenchProtocol("linear", 1.0), ch)
    assert len(est.per_ion_xi) == 22
    assert est.xi_hat == pytest.approx(np.mean(est.per_ion_xi))


# -- defect density ----------------------------------------------------------------


def test_count_one_boundary():
    p = ScalingParams(eta=10.0, a_0=1.0)
    pr = QuenchProtocol("linear", 1e4)
    xi = ef_core.xi_hat(p, pr)
    est = ef_core.defect_density(p.replace(length=xi), pr)
    assert est.count == pytest.approx(1.0, rel=1e-12)
    assert est.kinks == pytest.approx(0.0, abs=1e-12)


def test_homogeneous_density_definitions():
    p = ScalingParams(eta=10.0, a_0=1.0, n_ions=1000)
    pr = QuenchProtocol("linear", 1e5)
    est = ef_core.defect_density(p, pr)
    assert est.density == pytest.approx(1 / est.xi_hat)
    assert est.count == pytest.approx(p.length / est.xi_hat)
    assert est.regime == ef_core.regime_classify(p, 1e5)


def test_fast_quench_saturates_at_cap():
    p = ScalingParams(eta=10.0, a_0=1.0, n_ions=16)
    counts = [ef_core.defect_density(p, QuenchProtocol("linear", t)).count for t in np.logspace(-6, -3, 4)]
    assert counts == [14.0] * 4
    for t in np.logspace(-6, 8, 30):
        assert 0 <= ef_core.defect_density(p, QuenchProtocol("linear", t)).count <= 14


def test_unknown_geometry():
    with pytest.raises(ValueError):
        ef_core.defect_density(UNIT, QuenchProtocol("linear", 1.0), "cylinder")


# -- defect loss -------------------------------------------------------------------


def test_loss_correction_small_x():
    for x in (1e-4, 1e-6):
        assert ef_core.defect_loss_correction(2.89, x) / x == pytest.approx(1.0, rel=1e-3)


def test_loss_correction_finite_vs_infinite_sum():
    p, x = 2.89, 0.1
    inf = ef_core.defect_loss_correction(p, x)
    fin = ef_core.defect_loss_correction(p, x, n_max=400)
    assert fin == pytest.approx(inf, rel=1e-12)
    assert inf == pytest.approx((1 - p * x) * x, rel=1e-14)
    with pytest.raises(DivergenceError):
        ef_core.defect_loss_correction(p, 1 / p)
    assert ef_core.defect_loss_correction(p, 0.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_loss_factor_decreasing(p, u, w):
    x1, x2 = sorted((u / p, w / p))
    if x2 - x1 < 1e-9:
        return
    f1 = ef_core.defect_loss_correction(p, x1) / x1
    f2 = ef_core.defect_loss_correction(p, x2) / x2
    assert f2 <= f1


def test_loss_corrected_curve_shape():
    taus = np.logspace(0, 6, 25)
    raw = 0.1 * taus**-0.25  # below 1/(2p), where f_p(x) x peaks
    corr = np.array([ef_core.defect_loss_correction(2.89, x) for x in raw])
    ly, lx = np.log(corr), np.log(taus)
    assert np.all(np.diff(corr) < 0)
    # concave on log-log: flatter at fast quenches, steepening to -1/4 as the loss fades
    slopes = np.diff(ly) / np.diff(lx)
    assert np.all(np.diff(slopes) < 0)
    assert -0.25 < slopes[-1] < -0.24


# -- regimes -----------------------------------------------------------------------


def test_regime_from_ratios_examples():
    assert ef_core.regime_from_ratios(100.0, math.inf, 0.0) == "underdamped"
    assert ef_core.regime_from_ratios(0.01, math.inf, 0.0) == "overdamped"
    assert ef_core.regime_from_ratios(2.0, 5.0, 3.0) == "transition"
    assert ef_core.regime_from_ratios(2.0, 0.01, 0.0) == "saturation"
    assert ef_core.regime_from_ratios(2.0, 0.01, 100.0) == "supersaturation"


def test_regime_classify_saturation():
    p = ScalingParams(eta=1.0, a_0=1.0)
    assert ef_core.regime_classify(p, p.beta / 100) == "saturation"
    q = ScalingParams(eta=100.0, a_0=1.0)
    assert ef_core.regime_classify(q, q.beta / 100) == "supersaturation"


def test_regime_classify_damping():
    assert ef_core.regime_classify(ScalingParams(eta=1e-3), 1e3) == "underdamped"
    assert ef_core.regime_classify(ScalingParams(eta=10.0), 1e5) == "overdamped"
    damping, _, _ = ef_core.regime_ratios(ScalingParams(eta=1e-3), 1e3)
    assert damping > 10
