"""Classic Kibble-Zurek power laws, used as a shape baseline for the
extended-formulation predictor.

Homogeneous chains follow ``d ~ tau_q**-1/3`` on the underdamped side and
``d ~ tau_q**-1/4`` on the overdamped side.  In a harmonic trap the
exponent depends on how the front velocity ``v_F`` compares with the
characteristic velocity ``v_hat``:

    v_F >> v_hat   homogeneous exponent (1/3 or 1/4)
    v_F ~  v_hat   4/3
    v_F << v_hat   8/3 (underdamped) or 1 (overdamped)

Prefactors are not taken from closed forms; each prediction is anchored to
one predictor evaluation so that only the exponents are compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import ef_core
from . import trap as trap_mod
from .quench import Kind, QuenchProtocol, delta_at, epsilon_rate

EXPONENTS = {
    "underdamped": 1.0 / 3.0,
    "overdamped": 0.25,
    "front_comparable": 4.0 / 3.0,
    "front_slow_underdamped": 8.0 / 3.0,
    "front_slow_overdamped": 1.0,
}
SATURATED = ("saturation", "supersaturation")


@dataclass(frozen=True)
class KzmPrediction:
    """Power law ``d = prefactor * tau_q**-exponent``.

    ``adjacent`` holds the exponents on either side when the regime is a
    transition; ``front`` is ``"fast"``, ``"comparable"`` or ``"slow"`` for
    harmonic chains and ``None`` otherwise.
    """

    exponent: float
    prefactor: float
    regime: str
    velocity_ratio: float | None = None
    adjacent: tuple | None = None
    front: str | None = None
    tau_ref: float | None = None

    def density(self, tau_q):
        return self.prefactor * np.asarray(tau_q, dtype=float) ** (-self.exponent)


def _homogeneous_exponent(params, tau_q):
    """Exponent, regime tag and adjacent pair from the damping ratio."""
    damping, qb, ss = ef_core.regime_ratios(params, tau_q)
    regime = ef_core.regime_from_ratios(damping, qb, ss)
    if regime in SATURATED:
        # the plateau has no decay at all
        return 0.0, regime, None
    if regime == "transition":
        adj = (EXPONENTS["overdamped"], EXPONENTS["underdamped"])
        # report the side the damping ratio leans towards
        return (adj[1] if damping >= 1.0 else adj[0]), regime, adj
    return EXPONENTS[regime], regime, None


def harmonic_profile(chain: ef_core.HarmonicChain, mass=1.0, coulomb=1.0, charge=1.0):
    """Smooth omega_c^2(x) for a harmonic chain.

    Peak value from the local-density estimate at the centre, half-length
    from the outermost ion plus half an edge spacing.
    """
    prof = trap_mod.ChainProfile.from_positions(chain.positions, mass, coulomb, charge)
    x = np.asarray(chain.positions)
    a = chain.spacings
    return trap_mod.HarmonicProfile(prof.omega_c2_ref, float(np.max(np.abs(x)) + 0.5 * a[-1]))


def front_velocity(protocol: QuenchProtocol, x, t, trap):
    """``d_t delta / d_x delta`` at ``(x, t)``.

    The time derivative is analytic.  The space derivative uses the
    profile's ``d_omega_c2`` when it has one, otherwise a Richardson
    extrapolated central difference.  Returns a signed infinity when the
    profile is flat at ``x`` (the whole chain goes critical at once).
    """
    num = protocol.delta_0 * epsilon_rate(protocol, t)
    den = None
    deriv = getattr(trap, "d_omega_c2", None)
    if deriv is not None:
        den = deriv(x)
    if den is None:
        den = _richardson(lambda z: delta_at(protocol, z, t, trap), x)
    den = float(den)
    if den == 0.0:
        return math.copysign(math.inf, num) if num != 0 else math.inf
    return num / den


def _richardson(f, x, rel=1e-6):
    scale = max(abs(x), 1.0)
    h = rel * scale

    def central(hh):
        return (f(x + hh) - f(x - hh)) / (2.0 * hh)

    return (4.0 * central(0.5 * h) - central(h)) / 3.0


def characteristic_velocity(params: ef_core.ScalingParams, tau_q, spacing=None):
    """a omega_0 (delta_0 / (eta^3 tau_q))^(1/2), ``a`` defaulting to ``params.a_0``."""
    a = params.a_0 if spacing is None else spacing
    return a * params.omega_0 * math.sqrt(params.delta_0 / (params.eta**3 * tau_q))


def velocity_ratio(params, tau_q, chain, protocol=None, x=None):
    """|v_F| / v_hat at probe position ``x`` (default: a quarter of the chain length
    from the centre), with the front evaluated when it passes ``x``."""
    pr = protocol if protocol is not None else QuenchProtocol(Kind.LINEAR, tau_q, delta_0=params.delta_0)
    pos = np.asarray(chain.positions)
    if x is None:
        x = 0.25 * float(np.ptp(pos))
    prof = harmonic_profile(chain, params.mass, params.coulomb, params.charge)
    shift = prof.omega_c2_ref - float(prof.omega_c2(x))
    t_x = ef_core.crossing_time(replace(pr, offset=pr.offset + shift / pr.delta_0), params)
    v_f = front_velocity(pr, x, t_x, prof)
    a_x = float(np.interp(x, pos, chain.spacings))
    return abs(v_f) / characteristic_velocity(params, pr.tau_q, a_x)


def kzm_defect_density(params: ef_core.ScalingParams, tau_q, geometry="homogeneous",
                       tau_ref=None, protocol=None, x_probe=None) -> KzmPrediction:
    """Piecewise KZM power law valid around ``tau_q``.

    ``geometry`` is ``"homogeneous"`` or an :class:`~kzq.ef_core.HarmonicChain`.
    The prefactor is fixed by the predictor's density at ``tau_ref``
    (default ``tau_q``).
    """
    tau_ref = tau_q if tau_ref is None else tau_ref
    exponent, regime, adjacent = _homogeneous_exponent(params, tau_q)
    ratio = None
    front = None
    if isinstance(geometry, ef_core.HarmonicChain):
        ratio = velocity_ratio(params, tau_q, geometry, protocol, x_probe)
        if regime not in SATURATED:
            slow = EXPONENTS["front_slow_overdamped" if regime == "overdamped"
                             else "front_slow_underdamped"]
            if ratio > ef_core.MUCH_GREATER:
                front = "fast"
            elif ratio < ef_core.MUCH_LESS:
                front, exponent, adjacent = "slow", slow, None
            else:
                front = "comparable"
                exponent, adjacent = EXPONENTS["front_comparable"], (exponent, slow)
    elif geometry != "homogeneous":
        raise ValueError(f"unknown geometry {geometry!r}")
    pr = protocol if protocol is not None else QuenchProtocol(Kind.LINEAR, tau_ref, delta_0=params.delta_0)
    est = ef_core.defect_density(params, pr.with_tau_q(tau_ref), geometry)
    prefactor = est.density * tau_ref**exponent
    return KzmPrediction(exponent, prefactor, regime, ratio, adjacent, front, tau_ref)


def comparable_front_density(xi_hat, half_width):
    """``2 X / xi_hat`` for a front moving at about ``v_hat``.

    ``half_width`` (X) is the half-width of the effectively critical region.
    It has no closed form here and must be supplied by the caller.
    """
    if not (xi_hat > 0 and half_width >= 0):
        raise ValueError("need xi_hat > 0 and half_width >= 0")
    return 2.0 * half_width / xi_hat
