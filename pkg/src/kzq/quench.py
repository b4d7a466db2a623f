"""Quench protocols: the reduced control parameter and its time derivative.

Sign convention: ``epsilon > 0`` is the broken-symmetry (zigzag) side of the
transition for every protocol kind.  The transverse confinement seen by the
chain is ``omega_t^2(t) = omega_c^2 - delta_0 * epsilon(t)``, so the detuning
returned by :func:`delta_at` is positive once an ion has crossed its local
critical point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ProtocolRangeError

__all__ = [
    "Kind",
    "QuenchProtocol",
    "epsilon_at",
    "epsilon_rate",
    "delta_at",
    "transverse_omega2",
    "protocol_from_dict",
    "protocol_to_dict",
]

# below this |omega t| the oscillation quotients are evaluated by series
_SERIES_CUTOFF = 1e-4


class Kind(str, enum.Enum):
    LINEAR = "linear"
    POWER_LAW = "power_law"
    OSC_SIN2 = "osc_sin2"
    OSC_EQ8 = "osc_eq8"
    TABULATED = "tabulated"


EQ8_GROUPINGS = ("sin_omega_t2", "sin2_omega_t")


def _sin2_over_u(u):
    """sin(u)**2 / u and its derivative, regular at u = 0."""
    if abs(u) < _SERIES_CUTOFF:
        u2 = u * u
        return u - u * u2 / 3.0, 1.0 - u2 + 2.0 * u2 * u2 / 9.0
    s = math.sin(u)
    return s * s / u, math.sin(2.0 * u) / u - s * s / (u * u)


def _sin_t2_over_t(t, omega):
    """sin(omega t^2) / t and its derivative, regular at t = 0."""
    w = omega * t * t
    if abs(w) < _SERIES_CUTOFF:
        return omega * t - omega * w * w * t / 6.0, omega - 5.0 * omega * w * w / 6.0
    return math.sin(w) / t, 2.0 * omega * math.cos(w) - math.sin(w) / (t * t)


@dataclass(frozen=True)
class QuenchProtocol:
    """Time dependence of the reduced control parameter.

    Parameters
    ----------
    kind : Kind
        Protocol family.
    tau_q : float
        Quench timescale.  For ``osc_sin2`` it is the timescale of the linear
        approach before ``t = 0`` and of the pull-down after ``t_stop``.
    r : float
        Exponent of the power-law family ``sign(t) |t/tau_q|**r``.
    lam : float
        Oscillation amplitude.  ``osc_sin2`` uses detuning units times time
        (the detuning is ``lam sin^2(omega t)/t``); ``osc_eq8`` uses time^2.
    omega : float
        Oscillation angular frequency (``osc_eq8``: multiplies ``t**2``).
    t_f : float
        Final-time offset of ``osc_eq8``.
    delta_0 : float
        Detuning scale converting squared-frequency detuning to ``epsilon``.
    samples : tuple of (t, epsilon) pairs
        Tabulated protocol, strictly increasing in ``t``.
    t_stop : float or None
        ``osc_sin2`` only: end of the oscillation, followed by a linear
        pull-down at rate ``1/tau_q``.  ``None`` oscillates forever.
    offset : float
        Constant subtracted from ``epsilon``; shifts the local critical point
        of one ion in an inhomogeneous chain.
    eq8_grouping : str
        ``"sin_omega_t2"`` reads the oscillating term as ``sin(omega t^2)``;
        ``"sin2_omega_t"`` as ``sin(omega t)^2``.
    """

    kind: Kind
    tau_q: float
    r: float = 1.0
    lam: float = 0.0
    omega: float = 1.0
    t_f: float = 0.0
    delta_0: float = 1.0
    samples: tuple | None = field(default=None, repr=False)
    t_stop: float | None = None
    offset: float = 0.0
    eq8_grouping: str = "sin_omega_t2"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.tau_q > 0:
            raise ValueError(f"tau_q must be positive, got {self.tau_q}")
        if self.kind in (Kind.OSC_SIN2, Kind.OSC_EQ8):
            if not self.omega > 0:
                raise ValueError("omega must be positive")
            if self.lam < 0:
                raise ValueError("lam must be non-negative")
        if self.kind is Kind.POWER_LAW and not self.r > 0:
            raise ValueError("power-law exponent must be positive")
        if not self.delta_0 > 0:
            raise ValueError("delta_0 must be positive")
        if self.eq8_grouping not in EQ8_GROUPINGS:
            raise ValueError(f"eq8_grouping must be one of {EQ8_GROUPINGS}")
        if self.kind is Kind.TABULATED:
            if self.samples is None or len(self.samples) < 2:
                raise ValueError("tabulated protocol needs at least two samples")
            arr = np.asarray(self.samples, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError("samples must be (t, epsilon) pairs")
            if np.any(np.diff(arr[:, 0]) <= 0):
                raise ValueError("tabulated samples must be strictly increasing in t")
            object.__setattr__(self, "samples", tuple(map(tuple, arr.tolist())))
        if self.t_stop is not None and self.kind is Kind.OSC_SIN2:
            if not self.t_stop > 0:
                raise ValueError("t_stop must be positive")

    # -- core evaluation --------------------------------------------------
    def _eval(self, t):
        """Return (epsilon, d epsilon / dt) before the offset is applied."""
        k = self.kind
        tq = self.tau_q
        if k is Kind.LINEAR:
            return t / tq, 1.0 / tq
        if k is Kind.POWER_LAW:
            a = abs(t / tq)
            val = math.copysign(a**self.r, t) if t != 0 else 0.0
            if a == 0:
                rate = 1.0 / tq if self.r == 1 else (0.0 if self.r > 1 else math.inf)
            else:
                rate = self.r * a ** (self.r - 1.0) / tq
            return val, rate
        if k is Kind.OSC_SIN2:
            if t <= 0:
                return t / tq, 1.0 / tq
            if self.t_stop is not None and t > self.t_stop:
                e_stop, _ = self._osc_sin2(self.t_stop)
                return e_stop + (t - self.t_stop) / tq, 1.0 / tq
            return self._osc_sin2(t)
        if k is Kind.OSC_EQ8:
            if self.eq8_grouping == "sin_omega_t2":
                h, dh = _sin_t2_over_t(t, self.omega)
            else:
                s, ds = _sin2_over_u(self.omega * t)
                h, dh = self.omega * s, self.omega**2 * ds
            return (t + self.lam * h - self.t_f) / tq, (1.0 + self.lam * dh) / tq
        # tabulated
        ts = [p[0] for p in self.samples]
        es = [p[1] for p in self.samples]
        if t < ts[0] or t > ts[-1]:
            raise ProtocolRangeError(
                f"t={t} outside tabulated range [{ts[0]}, {ts[-1]}]"
            )
        val = float(np.interp(t, ts, es))
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        slope = (es[i + 1] - es[i]) / (ts[i + 1] - ts[i])
        if t == ts[i] and i > 0:
            prev = (es[i] - es[i - 1]) / (ts[i] - ts[i - 1])
            slope = 0.5 * (slope + prev)
        return val, slope

    def _osc_sin2(self, t):
        u = self.omega * t
        s, ds = _sin2_over_u(u)
        scale = self.lam / self.delta_0
        return scale * self.omega * s, scale * self.omega**2 * ds

    def epsilon(self, t):
        return self._eval(float(t))[0] - self.offset

    def rate(self, t):
        return self._eval(float(t))[1]

    @property
    def crosses_at_zero(self):
        """True when epsilon(0) == 0 by construction, i.e. the critical point
        is crossed at t = 0."""
        if self.offset != 0:
            return False
        if self.kind is Kind.OSC_EQ8:
            return self.t_f == 0
        return self.kind is not Kind.TABULATED

    def with_tau_q(self, tau_q):
        return replace(self, tau_q=float(tau_q))


def epsilon_at(protocol: QuenchProtocol, t: float) -> float:
    """Reduced control parameter at time ``t``."""
    return protocol.epsilon(t)


def epsilon_rate(protocol: QuenchProtocol, t: float) -> float:
    """Time derivative of :func:`epsilon_at` (analytic, piecewise for tables)."""
    return protocol.rate(t)


def transverse_omega2(protocol: QuenchProtocol, t: float, omega_c2: float) -> float:
    """Squared transverse trap frequency driven by ``protocol``."""
    return omega_c2 - protocol.delta_0 * protocol.epsilon(t)


def delta_at(protocol: QuenchProtocol, x, t: float, trap) -> float:
    """Local detuning below criticality, ``omega_c^2(x) - omega_t^2(t)``.

    ``trap`` is any profile exposing ``omega_c2(x)`` and ``omega_c2_ref``
    (see :mod:`kzq.trap`).  For a homogeneous chain this is
    ``delta_0 * epsilon(t)``.
    """
    w_t2 = transverse_omega2(protocol, t, trap.omega_c2_ref)
    return trap.omega_c2(x) - w_t2


def protocol_to_dict(p: QuenchProtocol) -> dict:
    out = {"kind": p.kind.value, "tau_q": p.tau_q}
    defaults = QuenchProtocol(kind=Kind.LINEAR, tau_q=1.0)
    for name in ("r", "lam", "omega", "t_f", "delta_0", "t_stop", "offset", "eq8_grouping"):
        val = getattr(p, name)
        if val != getattr(defaults, name):
            out[name] = val
    if p.samples is not None:
        out["samples"] = [list(s) for s in p.samples]
    return out


_PROTOCOL_KEYS = {
    "kind", "tau_q", "r", "lam", "lambda", "omega", "t_f", "delta_0",
    "samples", "t_stop", "offset", "eq8_grouping",
}


def protocol_from_dict(d: dict) -> QuenchProtocol:
    """Build a protocol from its JSON form; unknown keys are rejected."""
    unknown = set(d) - _PROTOCOL_KEYS
    if unknown:
        raise ConfigError("unknown key", key=f"protocol.{sorted(unknown)[0]}")
    kw = dict(d)
    if "lambda" in kw:
        kw["lam"] = kw.pop("lambda")
    if "samples" in kw and kw["samples"] is not None:
        kw["samples"] = tuple(tuple(s) for s in kw["samples"])
    return QuenchProtocol(**kw)
