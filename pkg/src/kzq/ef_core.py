"""Extended-formulation defect predictor.

The chain of quantities is

    relaxation time  tau(eps)   = tau_0 / (sqrt(1 + alpha |eps|) - 1)
    lifetime         tau_N(eps) = c_N tau(eps)
    velocity         v_p(eps)   = kappa_N xi_0 |eps|^-1/2 / tau_N(eps)
    KZM boundary     t_hat      : t_hat = tau_N(eps(t_hat))
    driven boundary  t_hat_N    = t_hat / (sqrt(beta |deps/dt|) + 1)
    domain length    xi_hat     = int_0^t_hat_N v_p dt
    density          d          = 1 / xi_hat

with times measured from the moment the protocol crosses the critical point.
For a chain in a harmonic trap the domain length instead follows the
first-order equation in v solved by :func:`solve_inhomogeneous_xi`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize, special

from . import trap as trap_mod
from .errors import (
    DivergenceError,
    QuadratureError,
    RegimeError,
    RootNotFoundError,
    SingularityError,
)
from .quench import Kind, QuenchProtocol

log = logging.getLogger(__name__)

ZETA3 = trap_mod.ZETA3
# max of sin(u)^2/u, attained at tan(u) = 2u
SIN2_OVER_U_MAX = 0.7246113537767086

# ratio thresholds standing in for ">>" and "<<"
MUCH_GREATER = 10.0
MUCH_LESS = 0.1

REGIMES = ("underdamped", "overdamped", "transition", "saturation", "supersaturation")


@dataclass(frozen=True)
class ScalingParams:
    """Physical and phenomenological constants of the predictor.

    ``tau_0`` defaults to ``2/eta``, the value for which the relaxation time
    above is the inverse growth rate of a damped soft mode with squared
    frequency ``-delta_0 |eps|``.  ``length`` defaults to ``n_ions * a_0``
    (or 1 for a continuous medium).
    """

    xi_0: float = 1.0
    eta: float = 1.0
    delta_0: float = 1.0
    tau_0: float | None = None
    a_0: float = 0.0
    n_ions: int = 22
    mass: float = 1.0
    charge: float = 1.0
    coulomb: float = 1.0
    length: float | None = None
    kT: float = 0.0
    c_n: float = 1.0
    kappa_n: float = 1.0
    omega_0: float = 1.0

    def __post_init__(self):
        if self.tau_0 is None:
            object.__setattr__(self, "tau_0", 2.0 / self.eta)
        if self.length is None:
            object.__setattr__(
                self, "length", self.n_ions * self.a_0 if self.a_0 > 0 else 1.0
            )
        for name in ("xi_0", "eta", "delta_0", "tau_0", "mass", "charge",
                     "coulomb", "length", "c_n", "kappa_n", "omega_0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.a_0 < 0 or self.kT < 0:
            raise ValueError("a_0 and kT must be non-negative")
        if self.n_ions < 1:
            raise ValueError("n_ions must be at least 1")

    @property
    def xi_1(self):
        return self.kappa_n * self.xi_0

    @property
    def tau_1(self):
        return self.c_n * self.tau_0

    @property
    def alpha(self):
        return 4.0 * self.delta_0 / self.eta**2

    @property
    def beta(self):
        return 4.0 * (self.a_0 / self.xi_1) ** 3 * self.eta * self.tau_1 / math.sqrt(self.delta_0)

    @property
    def gamma(self):
        return self.xi_1 / self.tau_1

    def chi(self, tau_q):
        q2 = self.coulomb * self.charge**2
        return (189.0 * q2 * ZETA3 * self.n_ions**3 * tau_q
                / (512.0 * math.pi * self.mass * self.length**3 * self.delta_0))

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class FreezeOut:
    """Boundary quantities; times are durations after the critical crossing
    at ``t_cross``."""

    t_hat: float
    t_hat_n: float
    tau_n_at_boundary: float
    xi_n_at_boundary: float
    v_p_at_boundary: float
    t_cross: float = 0.0
    eps_at_boundary: float = float("nan")


@dataclass(frozen=True)
class DefectEstimate:
    xi_hat: float
    density: float
    count: float
    kinks: float
    regime: str
    corrected_count: float
    no_defects: bool = False
    freeze_out: FreezeOut | None = None
    per_ion_xi: tuple | None = field(default=None, repr=False)


# -- scalar building blocks -----------------------------------------------


def _abs_eps(eps):
    a = np.abs(np.asarray(eps, dtype=float))
    return a if a.ndim else float(a)


def relaxation_time(params: ScalingParams, eps):
    """tau_0 / (sqrt(1 + alpha|eps|) - 1); diverges at eps = 0."""
    a = _abs_eps(eps)
    if np.any(a == 0):
        raise DivergenceError("relaxation time diverges at eps = 0")
    x = params.alpha * a
    # sqrt(1+x) - 1 written without cancellation
    return params.tau_0 * (np.sqrt(1.0 + x) + 1.0) / x


def lifetime_tau_n(params: ScalingParams, eps):
    return params.c_n * relaxation_time(params, eps)


def correlation_length(params: ScalingParams, eps):
    a = _abs_eps(eps)
    if np.any(a == 0):
        raise DivergenceError("correlation length diverges at eps = 0")
    return params.xi_0 / np.sqrt(a)


def propagation_velocity(params: ScalingParams, eps):
    """kappa_N xi(eps) / tau_N(eps).

    Simplifies to ``gamma alpha |eps|^1/2 / (sqrt(1 + alpha|eps|) + 1)``,
    which is finite (zero) at eps = 0 and tends to ``gamma sqrt(alpha)`` deep
    in the underdamped branch.
    """
    a = _abs_eps(eps)
    x = params.alpha * a
    return params.gamma * params.alpha * np.sqrt(a) / (np.sqrt(1.0 + x) + 1.0)


def lifetime_constant(mass, omega_tc, kT, barrier_a, gamma, n_ions, eta):
    """c_N from the stochastic-breaking estimate of the lifetime.

    ``barrier_a`` is the (otherwise unspecified) constant in the exponent;
    it has to be supplied by the caller.
    """
    z = 8.0 * kT * barrier_a
    return math.exp(mass * omega_tc**4 / z) * z * gamma * math.sqrt(omega_tc) / (n_ions * mass * eta**3)


# -- freeze-out --------------------------------------------------------------


def _time_scale(params, protocol):
    s = max(protocol.tau_q, params.tau_1)
    if protocol.kind in (Kind.OSC_SIN2, Kind.OSC_EQ8):
        s = max(s, 1.0 / protocol.omega)
    return s


def _scan_points(params, protocol, start):
    """Candidate times (after ``start``) at which to look for a sign change."""
    scale = _time_scale(params, protocol)
    geo = scale * np.logspace(-12, 12, 250)
    pts = [geo]
    if protocol.kind is Kind.OSC_SIN2:
        period = math.pi / protocol.omega
        end = protocol.t_stop if protocol.t_stop is not None else 64 * period
        pts.append(np.linspace(0.0, end, int(16 * end / period) + 2)[1:])
        if protocol.t_stop is None:
            geo = geo[geo <= end]
            pts[0] = geo
    elif protocol.kind is Kind.OSC_EQ8:
        phases = np.arange(1, 16 * 64 + 1) * (math.pi / 16)
        pts.append(np.sqrt(phases / protocol.omega))
    out = np.unique(np.concatenate(pts))
    return out[out > 0] if start == 0 else out


def crossing_time(protocol: QuenchProtocol, params: ScalingParams | None = None):
    """Time at which epsilon first changes sign from <= 0 to > 0."""
    if protocol.crosses_at_zero:
        return 0.0
    if protocol.kind is Kind.TABULATED:
        ts = np.array([s[0] for s in protocol.samples])
        cand = np.unique(np.concatenate([ts, np.linspace(ts[0], ts[-1], 4001)]))
    else:
        params = params or ScalingParams()
        cand = np.concatenate([[0.0], _scan_points(params, protocol, 0.0)])
    vals = np.array([protocol.epsilon(t) for t in cand])
    idx = np.nonzero((vals[:-1] <= 0) & (vals[1:] > 0))[0]
    if len(idx) == 0:
        raise RootNotFoundError(
            "protocol never crosses the critical point", bracket=(cand[0], cand[-1])
        )
    i = idx[0]
    if vals[i] == 0:
        return float(cand[i])
    return optimize.brentq(protocol.epsilon, cand[i], cand[i + 1], xtol=1e-14 * max(1.0, abs(cand[i + 1])), rtol=4 * np.finfo(float).eps)


def kzm_freeze_out(params: ScalingParams, protocol: QuenchProtocol, t_cross=None) -> float:
    """Duration t_hat after the crossing with t_hat = tau_N(eps(t_cross + t_hat))."""
    tc = crossing_time(protocol, params) if t_cross is None else t_cross

    def g(s):
        e = protocol.epsilon(tc + s)
        if e == 0:
            return -1e300
        return s - lifetime_tau_n(params, e)

    pts = _scan_points(params, protocol, tc)
    prev = None
    for s in pts:
        val = g(s)
        if val > 0:
            if prev is None:
                raise RootNotFoundError(
                    "freeze-out already passed at the first scan point", bracket=(0.0, s)
                )
            return optimize.brentq(
                g, prev, s, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500
            )
        prev = s
    raise RootNotFoundError(
        "no freeze-out: tau_N(eps(t)) stays above the elapsed time",
        bracket=(float(pts[0]), float(pts[-1])),
    )


def freeze_out_time(params: ScalingParams, protocol: QuenchProtocol) -> FreezeOut:
    tc = crossing_time(protocol, params)
    t_hat = kzm_freeze_out(params, protocol, t_cross=tc)
    beta = params.beta
    if beta == 0:
        t_hat_n = t_hat
    else:
        rate = abs(protocol.rate(tc + t_hat))
        t_hat_n = t_hat / (math.sqrt(beta * rate) + 1.0)
    eps_n = protocol.epsilon(tc + t_hat_n)
    return FreezeOut(
        t_hat=t_hat,
        t_hat_n=t_hat_n,
        tau_n_at_boundary=float(lifetime_tau_n(params, eps_n)),
        xi_n_at_boundary=float(params.kappa_n * correlation_length(params, eps_n)),
        v_p_at_boundary=float(propagation_velocity(params, eps_n)),
        t_cross=tc,
        eps_at_boundary=eps_n,
    )


# -- domain length -------------------------------------------------------------


def xi_hat(params: ScalingParams, protocol: QuenchProtocol, freeze: FreezeOut | None = None) -> float:
    """Integral of v_p over (t_cross, t_cross + t_hat_N].

    Integrated in s = sqrt(t - t_cross) so the square-root onset of v_p at the
    critical point becomes a smooth integrand.
    """
    fo = freeze if freeze is not None else freeze_out_time(params, protocol)
    tc = fo.t_cross
    upper = math.sqrt(fo.t_hat_n)

    def f(s):
        return 2.0 * s * float(propagation_velocity(params, protocol.epsilon(tc + s * s)))

    breaks = None
    if protocol.kind is Kind.OSC_SIN2:
        n_zero = int(protocol.omega * fo.t_hat_n / math.pi)
        if n_zero > 0:
            breaks = [math.sqrt(k * math.pi / protocol.omega) for k in range(1, min(n_zero, 50) + 1)]
    val, err = integrate.quad(f, 0.0, upper, epsabs=0.0, epsrel=1e-11, limit=400, points=breaks)
    if not val > 0 or err > 1e-8 * abs(val):
        raise QuadratureError(
            f"xi_hat quadrature did not converge (value {val:.6g}, error {err:.3g})",
            achieved=err,
        )
    return val


def overdamped_lifetime_constant(params: ScalingParams):
    """Constant C with tau_N ~= C / |delta| in the overdamped branch.

    Equals ``c_N eta`` for the default ``tau_0 = 2/eta``.
    """
    return params.c_n * params.tau_0 * params.eta**2 / 2.0


def xi_oscillation_closed_form(params: ScalingParams, lam: float, omega: float, check_regime=True):
    """Fresnel closed form of xi_hat for the ``lam sin^2(omega t)/t`` drive.

    Returns ``None`` (no defects) when ``lam`` is below the lifetime constant
    ``c_N eta``: the lifetime then always exceeds the elapsed time and the
    chain never leaves the adiabatic regime.  Only valid in the overdamped
    branch, ``4 max|delta| / eta^2 << 1`` with ``max|delta| = 0.7246 lam
    omega``; outside it a :class:`RegimeError` is raised.

    The Fresnel integral F_rs(x) is the sine integral evaluated at sqrt(x),
    i.e. ``int_0^u sin(w) w^-1/2 dw = sqrt(2 pi) S(sqrt(2u/pi))``.
    """
    if not (lam > 0 and omega > 0):
        raise ValueError("lam and omega must be positive")
    if check_regime:
        ratio = 4.0 * SIN2_OVER_U_MAX * lam * omega / params.eta**2
        if not ratio < MUCH_LESS:
            raise RegimeError(
                f"closed form needs the overdamped branch: 4*0.7246*lam*omega/eta^2 = {ratio:.3g}"
            )
    c = overdamped_lifetime_constant(params)
    if lam < c:
        return None
    theta = math.asin(math.sqrt(min(c / lam, 1.0)))
    s_val, _ = special.fresnel(math.sqrt(2.0 * theta / math.pi))
    return (params.xi_1 * math.sqrt(params.delta_0 * lam) * math.sqrt(2.0 * math.pi) * s_val
            / (c * math.sqrt(omega)))


# -- harmonic chain ------------------------------------------------------------


def inhomogeneous_rhs(params: ScalingParams, tau_q, v, xi, chi=None):
    """d xi / d v of the harmonic-chain equation (pole at v^2 = alpha gamma^2)."""
    g = params.gamma
    ag2 = params.alpha * g * g
    first = -4.0 * v * g * g * (v * v + ag2) / (ag2 - v * v) ** 3
    chi = params.chi(tau_q) if chi is None else chi
    L = params.length
    return first / (1.0 / (2.0 * v * tau_q) - 3.0 * chi * xi * (L * L - xi * xi) ** 2)


def solve_inhomogeneous_xi(params: ScalingParams, tau_q: float, v_eval: float,
                           v_start=None, chi=None, rtol=1e-9, return_info=False,
                           method="LSODA"):
    """Integrate the harmonic-chain equation from ``v_start`` (xi = 0) to ``v_eval``.

    ``method`` is any :func:`scipy.integrate.solve_ivp` method; the default
    LSODA switches to a stiff (BDF) scheme on its own and is roughly twenty
    times cheaper than Radau on this problem, which is not stiff in practice.

    The solution runs to negative xi (the first term is negative below the
    pole); the magnitude is returned.  ``|xi|`` reaching the chain length
    stops the integration and the result is clamped to ``length``.
    """
    g = params.gamma
    v_pole = math.sqrt(params.alpha) * g
    if v_eval >= v_pole:
        raise SingularityError(
            f"v_eval={v_eval:.6g} at or beyond the pole v = sqrt(alpha) gamma = {v_pole:.6g}"
        )
    v0 = 1e-6 * v_pole if v_start is None else v_start
    L = params.length
    info = {"clamped": False, "nfev": 0}
    if v_eval <= v0:
        return (0.0, info) if return_info else 0.0
    chi_v = params.chi(tau_q) if chi is None else chi

    def rhs(v, y):
        return [inhomogeneous_rhs(params, tau_q, v, y[0], chi=chi_v)]

    def hit_length(v, y):
        return abs(y[0]) - L

    hit_length.terminal = True
    sol = integrate.solve_ivp(
        rhs, (v0, v_eval), [0.0], method=method, rtol=rtol, atol=1e-14 * L,
        events=hit_length,
    )
    info["nfev"] = sol.nfev
    if sol.status == 1:
        info["clamped"] = True
        log.info("harmonic xi reached the chain length at v=%.4g; clamped", sol.t_events[0][0])
        return (L, info) if return_info else L
    if sol.status != 0:
        raise SingularityError(f"harmonic xi integration failed: {sol.message}")
    xi = abs(float(sol.y[0, -1]))
    return (xi, info) if return_info else xi


@dataclass(frozen=True)
class HarmonicChain:
    """Ion chain in a harmonic well, described by its equilibrium positions."""

    positions: tuple

    @classmethod
    def from_trap(cls, n_ions, nu, mass=1.0, coulomb=1.0, charge=1.0):
        x = trap_mod.harmonic_equilibrium(n_ions, nu, mass, coulomb, charge)
        return cls(tuple(x.tolist()))

    @property
    def spacings(self):
        return trap_mod.local_spacings(self.positions)

    def omega_c2_shifts(self, mass=1.0, coulomb=1.0, charge=1.0):
        """omega_c^2(center) - omega_c^2(x_i) from the local-density estimate."""
        prof = trap_mod.ChainProfile.from_positions(self.positions, mass, coulomb, charge)
        w = np.array(prof.omega_c2_ions)
        return prof.omega_c2_ref - w


def _harmonic_xi(params, protocol, chain, v_eval_mode):
    a = chain.spacings
    a_ref = float(np.min(a))
    shifts = chain.omega_c2_shifts(params.mass, params.coulomb, params.charge)
    fo_center = freeze_out_time(params.replace(a_0=a_ref), protocol)
    xis = []
    cache = {}
    for i, (ai, dw) in enumerate(zip(a, shifts)):
        key = (round(ai, 12), round(dw, 12))
        if key in cache:  # mirror-image ions
            xis.append(cache[key])
            continue
        p_i = params.replace(a_0=float(ai), xi_0=params.xi_0 * ai / a_ref)
        if v_eval_mode == "center":
            v_eval = fo_center.v_p_at_boundary
        else:
            pr_i = replace(protocol, offset=protocol.offset + dw / protocol.delta_0)
            v_eval = freeze_out_time(p_i, pr_i).v_p_at_boundary
        v_eval = min(v_eval, (1 - 1e-12) * math.sqrt(p_i.alpha) * p_i.gamma)
        xi_i = solve_inhomogeneous_xi(p_i, protocol.tau_q, v_eval)
        cache[key] = xi_i
        xis.append(xi_i)
    return np.array(xis), fo_center


def defect_loss_correction(p: float, x: float, n_max: int | None = None, weighted=False) -> float:
    """Corrected density f_p(x) x with f_p(x) = p x / sum_n (p x)^n.

    The sum runs over n = 1..n_max (``None``: to infinity, which requires
    ``p x < 1``).  ``weighted=True`` uses sum_n n (p x)^n instead.
    """
    if not p > 0 or x < 0:
        raise ValueError("need p > 0 and x >= 0")
    if x == 0:
        return 0.0
    z = p * x
    if n_max is None:
        if z >= 1:
            raise DivergenceError(f"p x = {z:.4g} >= 1: infinite series diverges")
        total = z / (1 - z) ** 2 if weighted else z / (1 - z)
    else:
        n = np.arange(1, int(n_max) + 1, dtype=float)
        terms = z**n * (n if weighted else 1.0)
        total = float(terms.sum())
    return z / total * x


def regime_from_ratios(damping_ratio, quench_beta_ratio, supersat_ratio):
    """Regime tag from the three dimensionless comparisons.

    damping_ratio
        delta_0 |t_hat| / (tau_q eta^2)   (> 10: underdamped, < 0.1: overdamped)
    quench_beta_ratio
        tau_q / beta                      (< 0.1: saturation side)
    supersat_ratio
        eta / (0.52 omega_0 (kappa_N/c_N)^(1/3))   (> 10 with saturation: supersaturation)
    """
    if quench_beta_ratio < MUCH_LESS:
        return "supersaturation" if supersat_ratio > MUCH_GREATER else "saturation"
    if damping_ratio > MUCH_GREATER:
        return "underdamped"
    if damping_ratio < MUCH_LESS:
        return "overdamped"
    return "transition"


def regime_ratios(params: ScalingParams, tau_q: float, protocol: QuenchProtocol | None = None):
    pr = protocol if protocol is not None else QuenchProtocol(Kind.LINEAR, tau_q, delta_0=params.delta_0)
    t_hat = kzm_freeze_out(params, pr)
    damping = params.delta_0 * abs(t_hat) / (tau_q * params.eta**2)
    beta = params.beta
    qb = math.inf if beta == 0 else tau_q / beta
    ss = params.eta / (0.52 * params.omega_0 * (params.kappa_n / params.c_n) ** (1.0 / 3.0))
    return damping, qb, ss


def regime_classify(params: ScalingParams, tau_q: float, protocol: QuenchProtocol | None = None) -> str:
    try:
        return regime_from_ratios(*regime_ratios(params, tau_q, protocol))
    except RootNotFoundError:
        return "transition"


def defect_density(params: ScalingParams, protocol: QuenchProtocol, geometry="homogeneous",
                   loss_p=None, v_eval="center") -> DefectEstimate:
    """Defect density, domain count and regime for one protocol.

    ``geometry`` is ``"homogeneous"`` or a :class:`HarmonicChain`.  When the
    protocol never reaches a freeze-out boundary the estimate carries
    ``no_defects=True`` and zero counts.
    """
    L = params.length
    cap = max(params.n_ions - 2, 0)
    regime = regime_classify(params, protocol.tau_q)
    per_ion = None
    try:
        if isinstance(geometry, HarmonicChain):
            xis, fo = _harmonic_xi(params, protocol, geometry, v_eval)
            per_ion = tuple(xis.tolist())
            xi = float(np.mean(xis))
        elif geometry == "homogeneous":
            fo = freeze_out_time(params, protocol)
            xi = xi_hat(params, protocol, fo)
        else:
            raise ValueError(f"unknown geometry {geometry!r}")
    except RootNotFoundError:
        return DefectEstimate(math.inf, 0.0, 0.0, 0.0, regime, 0.0, no_defects=True)
    if xi <= 0:
        raise SingularityError("non-positive domain length")
    density = 1.0 / xi
    count = min(max(L / xi, 0.0), cap)
    kinks = max(count - 1.0, 0.0)
    corrected = count
    if loss_p is not None:
        x = count / params.n_ions
        corrected = defect_loss_correction(loss_p, x, n_max=params.n_ions) * params.n_ions
    return DefectEstimate(xi, density, count, kinks, regime, corrected,
                          freeze_out=fo, per_ion_xi=per_ion)
