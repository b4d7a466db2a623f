"""Trap geometry: linear-phase equilibria, critical frequencies and
local-critical-frequency profiles omega_c^2(x).

Units are dimensionless by default: mass, charge, Coulomb constant and ring
spacing all equal to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InitializationError

ZETA3 = 1.2020569031595943  # Apery's constant

# transverse Coulomb stiffness of an infinite uniform chain at k = pi, per k Q^2 / (m a^3)
ZIGZAG_LATTICE_SUM = 3.5 * ZETA3


def ring_positions(n, spacing=1.0):
    """Equally spaced arc-length coordinates on a ring of circumference n*spacing."""
    return spacing * np.arange(n, dtype=float)


def ring_radius(n, spacing=1.0):
    return n * spacing / (2.0 * math.pi)


def harmonic_length_scale(nu, mass=1.0, coulomb=1.0, charge=1.0):
    """Coulomb length (k Q^2 / (m nu^2))**(1/3)."""
    return (coulomb * charge**2 / (mass * nu**2)) ** (1.0 / 3.0)


def harmonic_equilibrium(n, nu, mass=1.0, coulomb=1.0, charge=1.0, tol=1e-10, max_iter=200):
    """Axial equilibrium of ``n`` ions in a harmonic well of frequency ``nu``.

    Newton iteration on the force balance in units of the Coulomb length;
    converges when the largest residual force is below ``tol`` times the
    Coulomb force scale.
    """
    if n == 1:
        return np.zeros(1)
    ell = harmonic_length_scale(nu, mass, coulomb, charge)
    # scaled problem: u_i - sum_j sign(u_i-u_j)/(u_i-u_j)^2 = 0
    half = (3.0 * n * math.log(max(n, 2))) ** (1.0 / 3.0) * 0.8
    u = np.linspace(-half, half, n)
    for _ in range(max_iter):
        d = u[:, None] - u[None, :]
        np.fill_diagonal(d, np.inf)
        grad = u - np.sum(np.sign(d) / d**2, axis=1)
        if np.max(np.abs(grad)) < tol:
            return ell * u
        hess = -2.0 / np.abs(d) ** 3
        np.fill_diagonal(hess, 0.0)
        hess[np.diag_indices(n)] = 1.0 - hess.sum(axis=1)
        step = np.linalg.solve(hess, grad)
        lam = 1.0
        # keep ordering
        while lam > 1e-6:
            trial = u - lam * step
            if np.all(np.diff(trial) > 0):
                break
            lam *= 0.5
        u = trial
    raise InitializationError(
        f"harmonic equilibrium for n={n} did not converge (residual {np.max(np.abs(grad)):.3e})"
    )


def pair_distances_ring(s, radius):
    """Chord distances between arc-length coordinates on a ring."""
    dtheta = (s[:, None] - s[None, :]) / radius
    return 2.0 * radius * np.abs(np.sin(0.5 * dtheta))


def transverse_coulomb_hessian(dist, coulomb=1.0, charge=1.0):
    """Hessian of the Coulomb energy w.r.t. transverse displacements at y = 0.

    ``dist`` is the matrix of axial (or chord) separations.
    """
    n = dist.shape[0]
    with np.errstate(divide="ignore"):
        k = coulomb * charge**2 / dist**3
    k[np.diag_indices(n)] = 0.0
    h = k.copy()
    h[np.diag_indices(n)] = -k.sum(axis=1)
    return h


def critical_omega2(dist, mass=1.0, coulomb=1.0, charge=1.0):
    """Squared transverse frequency at which the linear chain goes soft."""
    h = transverse_coulomb_hessian(dist, coulomb, charge)
    return float(-np.linalg.eigvalsh(h)[0] / mass)


def local_spacings(x):
    """Per-ion inter-particle distance: mean of the adjacent gaps."""
    gaps = np.diff(np.sort(np.asarray(x, dtype=float)))
    a = np.empty(len(gaps) + 1)
    a[0], a[-1] = gaps[0], gaps[-1]
    a[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return a


# -- omega_c^2(x) profiles ------------------------------------------------


@dataclass(frozen=True)
class HomogeneousProfile:
    omega_c2_ref: float

    def omega_c2(self, x):
        return self.omega_c2_ref + 0.0 * np.asarray(x, dtype=float)

    def d_omega_c2(self, x):
        return 0.0 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class QuadraticProfile:
    """omega_c^2(x) = omega_c2_ref - curvature * x^2."""

    omega_c2_ref: float
    curvature: float

    def omega_c2(self, x):
        x = np.asarray(x, dtype=float)
        return self.omega_c2_ref - self.curvature * x * x

    def d_omega_c2(self, x):
        return -2.0 * self.curvature * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class HarmonicProfile:
    """Local-density profile of a long chain in a harmonic well.

    The ion density falls as ``1 - (x/R)^2`` so the local critical frequency,
    which scales as ``a(x)**-3``, goes as ``(1 - (x/R)^2)**3``.
    """

    omega_c2_ref: float
    half_length: float

    def omega_c2(self, x):
        z = np.clip(1.0 - (np.asarray(x, dtype=float) / self.half_length) ** 2, 0.0, None)
        return self.omega_c2_ref * z**3

    def d_omega_c2(self, x):
        x = np.asarray(x, dtype=float)
        z = np.clip(1.0 - (x / self.half_length) ** 2, 0.0, None)
        return self.omega_c2_ref * 3.0 * z**2 * (-2.0 * x / self.half_length**2)


@dataclass(frozen=True)
class ChainProfile:
    """Profile sampled at the ions of a concrete chain (local-density estimate
    from per-ion spacings), linearly interpolated between ions."""

    positions: tuple
    omega_c2_ions: tuple

    @classmethod
    def from_positions(cls, x, mass=1.0, coulomb=1.0, charge=1.0):
        x = np.sort(np.asarray(x, dtype=float))
        a = local_spacings(x)
        w2 = ZIGZAG_LATTICE_SUM * coulomb * charge**2 / (mass * a**3)
        return cls(tuple(x.tolist()), tuple(w2.tolist()))

    @property
    def omega_c2_ref(self):
        return max(self.omega_c2_ions)

    def omega_c2(self, x):
        return np.interp(x, self.positions, self.omega_c2_ions)

    def d_omega_c2(self, x):
        return None  # no analytic derivative; callers fall back to differences
