"""Langevin dynamics of a two-dimensional ion chain driven through the
linear-to-zigzag transition.

Each ion has an axial coordinate (arc length on a ring, or x in a harmonic
well) and one transverse coordinate y.  The transverse confinement follows
the quench protocol,

    omega_t^2(t) = omega_c^2 - delta_0 * epsilon(t),

where omega_c^2 is the critical frequency of the actual chain, so that
epsilon = 0 is the instability point for every geometry.

The integrator is BAOAB splitting: half kick, half drift, exact
Ornstein-Uhlenbeck velocity update, half drift, half kick.  The OU step keeps
the stationary velocity distribution exact for any dt, and with ``eta = 0``
the scheme is velocity Verlet.

Units are dimensionless (mass, charge, Coulomb constant and ring spacing all
default to one).  Ensembles are integrated as one batched array; every
trajectory owns a random stream seeded from ``(master_seed, index)`` so
results do not depend on how trajectories are grouped.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import trap as trap_mod
from .errors import IonCrossingError, SingularityError
from .quench import QuenchProtocol, protocol_from_dict, protocol_to_dict

log = logging.getLogger(__name__)

GEOMETRIES = ("ring", "harmonic")
# draws of normals per generator call in the batched runner
_NOISE_CHUNK = 256


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters.

    The protocol is evaluated at simulation time ``t``; the run starts at
    ``t_start`` (usually negative, on the linear side), is held there for
    ``equilibration_time``, evolves to ``t_end`` and is then held at the
    final confinement for ``relax_time`` before kinks are counted.

    ``dt = None`` picks the largest step allowed by the stability bound
    ``dt <= min(2 pi / omega_max, 1 / eta) / 50``.  ``noise_refine = r``
    builds each step's kick from ``r`` sub-step normals, which makes a run
    at ``dt`` share its Brownian path with a run at ``dt / r``.
    """

    protocol: QuenchProtocol
    t_end: float
    n_ions: int = 22
    mass: float = 1.0
    charge: float = 1.0
    coulomb: float = 1.0
    eta: float = 0.1
    kT: float = 1e-3
    geometry: str = "ring"
    spacing: float = 1.0
    nu: float = 1.0
    dt: float | None = None
    t_start: float = 0.0
    equilibration_time: float = 0.0
    relax_time: float = 0.0
    kink_threshold: float = 0.1
    linear_floor: float = 1e-2
    noise_refine: int = 1

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        if self.n_ions < 2:
            raise ValueError("need at least two ions")
        if self.geometry == "ring" and self.n_ions % 2:
            raise ValueError("ring geometry needs an even number of ions for a staggered order")
        for name in ("mass", "charge", "coulomb", "spacing", "nu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta < 0 or self.kT < 0:
            raise ValueError("eta and kT must be non-negative")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if min(self.equilibration_time, self.relax_time) < 0:
            raise ValueError("equilibration_time and relax_time must be non-negative")
        if not 0 < self.kink_threshold < 1:
            raise ValueError("kink_threshold must lie in (0, 1)")
        if int(self.noise_refine) != self.noise_refine or self.noise_refine < 1:
            raise ValueError("noise_refine must be a positive integer")
        geo = _geometry(self)
        object.__setattr__(self, "_geo", geo)
        w2 = self._omega_t2_samples()
        if np.min(w2) <= 0:
            raise ValueError(
                f"transverse confinement vanishes during the run (min omega_t^2 = {np.min(w2):.4g})"
            )
        bound = self.dt_bound()
        object.__setattr__(self, "_dt_auto", self.dt is None)
        if self.dt is None:
            object.__setattr__(self, "dt", bound)
        elif not 0 < self.dt <= bound * (1 + 1e-12):
            raise ValueError(f"dt = {self.dt} violates the stability bound {bound:.4g}")

    # derived quantities ------------------------------------------------
    @property
    def omega_c2(self):
        return self._geo["omega_c2"]

    @property
    def equilibrium(self):
        return self._geo["equilibrium"].copy()

    @property
    def radius(self):
        return self._geo["radius"]

    def omega_t2(self, t):
        return self.omega_c2 - self.protocol.delta_0 * self.protocol.epsilon(t)

    def _omega_t2_samples(self):
        ts = np.linspace(self.t_start, self.t_end, 2001)
        return np.array([self.omega_t2(t) for t in ts])

    def omega_max(self):
        return math.sqrt(max(self._geo["axial_max"], float(np.max(self._omega_t2_samples()))))

    def dt_bound(self):
        lim = 2.0 * math.pi / self.omega_max()
        if self.eta > 0:
            lim = min(lim, 1.0 / self.eta)
        return lim / 50.0

    def replace(self, **kw):
        """Copy with changes; an automatic dt is recomputed for the new values."""
        if self._dt_auto:
            kw.setdefault("dt", None)
        return replace(self, **kw)

    def to_dict(self):
        d = {k: getattr(self, k) for k in _CONFIG_FIELDS}
        d["protocol"] = protocol_to_dict(self.protocol)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        kw["protocol"] = protocol_from_dict(kw["protocol"])
        return cls(**kw)


_CONFIG_FIELDS = (
    "t_end", "n_ions", "mass", "charge", "coulomb", "eta", "kT", "geometry",
    "spacing", "nu", "dt", "t_start", "equilibration_time", "relax_time",
    "kink_threshold", "linear_floor", "noise_refine",
)


def _geometry(cfg):
    n = cfg.n_ions
    if cfg.geometry == "ring":
        s = trap_mod.ring_positions(n, cfg.spacing)
        radius = trap_mod.ring_radius(n, cfg.spacing)
        dist = trap_mod.pair_distances_ring(s, radius)
    else:
        s = trap_mod.harmonic_equilibrium(n, cfg.nu, cfg.mass, cfg.coulomb, cfg.charge)
        radius = None
        dist = np.abs(s[:, None] - s[None, :])
    w_c2 = trap_mod.critical_omega2(dist, cfg.mass, cfg.coulomb, cfg.charge)
    # axial Hessian: 2 k Q^2 / r^3 couplings (chord form is close enough for a bound)
    with np.errstate(divide="ignore"):
        k = 2.0 * cfg.coulomb * cfg.charge**2 / dist**3
    k[np.diag_indices(n)] = 0.0
    h = -k
    h[np.diag_indices(n)] = k.sum(axis=1)
    if cfg.geometry == "harmonic":
        h[np.diag_indices(n)] += cfg.mass * cfg.nu**2
    axial_max = float(np.linalg.eigvalsh(h)[-1] / cfg.mass)
    pos = np.zeros((n, 2))
    pos[:, 0] = s
    return {"omega_c2": w_c2, "equilibrium": pos, "radius": radius, "axial_max": axial_max}


# -- state -----------------------------------------------------------------


@dataclass(frozen=True)
class ChainState:
    """One trajectory: positions and velocities (N x 2, columns axial and
    transverse), simulation time and the generator state."""

    positions: np.ndarray
    velocities: np.ndarray
    t: float
    rng_state: dict = field(repr=False)
    seed: int = 0
    index: int = 0

    def generator(self):
        g = np.random.Generator(np.random.PCG64())
        g.bit_generator.state = self.rng_state
        return g


def trajectory_rng(seed, index=0):
    """Generator for trajectory ``index`` of an ensemble with master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


@dataclass
class KinkReport:
    kink_count: int
    kink_positions: list
    order_parameter: list
    linear_phase: bool = False
    aborted: bool = False
    trajectory_meta: dict = field(default_factory=dict)

    def to_dict(self, include_timing=False):
        d = asdict(self)
        if not include_timing:
            d["trajectory_meta"] = {k: v for k, v in d["trajectory_meta"].items() if k != "wall_time"}
        return d

    def to_json(self, include_timing=False, **kw):
        return json.dumps(self.to_dict(include_timing), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- forces ----------------------------------------------------------------


def _pair_geometry(pos, cfg):
    """Separation components and inverse cube distances for a (S, N, 2) batch.

    Returns (ax, dy, inv_r, inv_r3) where ``ax`` is the axial separation
    projected for the force (chord derivative on a ring).
    """
    s = pos[..., 0]
    y = pos[..., 1]
    ds = s[..., :, None] - s[..., None, :]
    dy = y[..., :, None] - y[..., None, :]
    if cfg.geometry == "ring":
        half = ds / (2.0 * cfg.radius)
        c = 2.0 * cfg.radius * np.sin(half)
        ax_force = c * np.cos(half)
        r2 = c * c + dy * dy
    else:
        ax_force = ds
        r2 = ds * ds + dy * dy
    n = pos.shape[-2]
    idx = np.arange(n)
    r2[..., idx, idx] = np.inf
    if np.any(r2 == 0):
        raise SingularityError("coincident ions")
    inv_r = 1.0 / np.sqrt(r2)
    return ax_force, dy, inv_r, inv_r * inv_r * inv_r


def _coulomb_batch(pos, cfg):
    ax, dy, _, inv3 = _pair_geometry(pos, cfg)
    kq = cfg.coulomb * cfg.charge**2
    f = np.empty_like(pos)
    f[..., 0] = kq * np.sum(ax * inv3, axis=-1)
    f[..., 1] = kq * np.sum(dy * inv3, axis=-1)
    return f


def _trap_batch(pos, cfg, t):
    f = np.zeros_like(pos)
    f[..., 1] = -cfg.mass * cfg.omega_t2(t) * pos[..., 1]
    if cfg.geometry == "harmonic":
        f[..., 0] = -cfg.mass * cfg.nu**2 * pos[..., 0]
    return f


def coulomb_forces(state: ChainState, config: SimConfig) -> np.ndarray:
    """Pairwise 1/r^2 repulsion; on a ring the separation is the chord."""
    return _coulomb_batch(state.positions[None], config)[0]


def trap_forces(state: ChainState, config: SimConfig, t: float | None = None) -> np.ndarray:
    """Transverse -m omega_t^2(t) y, plus -m nu^2 x axially in a harmonic well."""
    t = state.t if t is None else t
    return _trap_batch(state.positions[None], config, t)[0]


def _forces(pos, cfg, t):
    return _coulomb_batch(pos, cfg) + _trap_batch(pos, cfg, t)


def potential_energy(state: ChainState, config: SimConfig, t: float | None = None) -> float:
    t = state.t if t is None else t
    _, _, inv_r, _ = _pair_geometry(state.positions[None], config)
    u = 0.5 * config.coulomb * config.charge**2 * float(np.sum(inv_r))
    y = state.positions[:, 1]
    u += 0.5 * config.mass * config.omega_t2(t) * float(np.sum(y * y))
    if config.geometry == "harmonic":
        x = state.positions[:, 0]
        u += 0.5 * config.mass * config.nu**2 * float(np.sum(x * x))
    return u


def total_energy(state: ChainState, config: SimConfig, t: float | None = None) -> float:
    ke = 0.5 * config.mass * float(np.sum(state.velocities**2))
    return ke + potential_energy(state, config, t)


# -- batched integrator ------------------------------------------------------


class _Batch:
    """Positions/velocities of S trajectories plus their noise streams."""

    def __init__(self, cfg, pos, vel, t, gens):
        self.cfg = cfg
        self.pos = pos
        self.vel = vel
        self.t = t
        self.gens = gens
        self.aborted = np.zeros(len(gens), dtype=bool)
        self._buf = None
        self._k = 0
        self.force = _forces(pos, cfg, t)
        c = math.exp(-cfg.eta * cfg.dt)
        self.c = c
        self.sigma = math.sqrt((1.0 - c * c) * cfg.kT / cfg.mass)
        r = cfg.noise_refine
        cs = math.exp(-cfg.eta * cfg.dt / r)
        w = cs ** np.arange(r - 1, -1, -1)
        self.weights = w / math.sqrt(np.sum(w * w))

    def _normals(self, chunk):
        """Next ``noise_refine`` normals per trajectory, combined into one kick."""
        r = self.cfg.noise_refine
        shape = self.pos.shape[1:]
        if self._buf is None or self._k >= self._buf.shape[1]:
            k = chunk * r
            self._buf = np.stack([g.standard_normal((k,) + shape) for g in self.gens])
            self._k = 0
        z = self._buf[:, self._k:self._k + r]
        self._k += r
        if r == 1:
            return z[:, 0]
        return np.tensordot(self.weights, z, axes=([0], [1]))

    def advance(self, n_steps, protocol_time=None, check=True, frame_cb=None, stride=1):
        """BAOAB steps; ``protocol_time`` freezes the drive at a fixed time."""
        cfg = self.cfg
        dt = cfg.dt
        half = 0.5 * dt / cfg.mass
        noisy = self.sigma > 0
        thermo = cfg.eta > 0
        for i in range(n_steps):
            remaining = n_steps - i
            self.vel += half * self.force
            self.pos += 0.5 * dt * self.vel
            if thermo:
                self.vel *= self.c
            if noisy:
                self.vel += self.sigma * self._normals(min(_NOISE_CHUNK, remaining))
            self.pos += 0.5 * dt * self.vel
            self.t += dt
            tp = self.t if protocol_time is None else protocol_time
            self.force = _forces(self.pos, cfg, tp)
            self.vel += half * self.force
            if check:
                self._check_order()
            if frame_cb is not None and (i + 1) % stride == 0:
                frame_cb(self)

    def _check_order(self):
        s = self.pos[..., 0]
        gaps = np.diff(s, axis=-1)
        bad = np.any(gaps <= 0, axis=-1)
        if self.cfg.geometry == "ring":
            circ = 2.0 * math.pi * self.cfg.radius
            bad |= (s[:, 0] + circ - s[:, -1]) <= 0
        new = bad & ~self.aborted
        if np.any(new):
            for j in np.nonzero(new)[0]:
                log.warning("ion crossing in trajectory %d at t=%.4g; aborted", j, self.t)
            self.aborted |= new

    def state(self, j, seed, index):
        return ChainState(self.pos[j].copy(), self.vel[j].copy(), float(self.t),
                          _gen_state_after(self, j), seed, index)


def _gen_state_after(batch, j):
    # unconsumed buffered normals are discarded; the state is what the
    # generator would continue with
    return batch.gens[j].bit_generator.state


def _init_batch(cfg, seed, indices):
    gens = [trajectory_rng(seed, i) for i in indices]
    n = cfg.n_ions
    pos = np.repeat(cfg.equilibrium[None], len(indices), axis=0)
    sd = math.sqrt(cfg.kT / cfg.mass)
    vel = np.stack([sd * g.standard_normal((n, 2)) for g in gens])
    b = _Batch(cfg, pos, vel, cfg.t_start, gens)
    n_eq = int(round(cfg.equilibration_time / cfg.dt))
    if n_eq:
        b.advance(n_eq, protocol_time=cfg.t_start)
    b.t = cfg.t_start
    b.force = _forces(b.pos, cfg, b.t)
    return b


def init_chain(config: SimConfig, seed: int = 0, index: int = 0) -> ChainState:
    """Linear-phase equilibrium, thermal velocities, then ``equilibration_time``
    of thermostatted evolution at the starting confinement."""
    b = _init_batch(config, seed, [index])
    if b.aborted[0]:
        raise IonCrossingError("ion crossing during equilibration")
    return b.state(0, seed, index)


def step(state: ChainState, config: SimConfig) -> ChainState:
    """Advance one trajectory by ``config.dt``."""
    g = state.generator()
    b = _Batch(config, state.positions[None].copy(), state.velocities[None].copy(), state.t, [g])
    b.advance(1, check=False)
    b._check_order()
    if b.aborted[0]:
        raise IonCrossingError(f"ion crossing at t={b.t:.6g}")
    return ChainState(b.pos[0], b.vel[0], b.t, g.bit_generator.state, state.seed, state.index)


# -- observables -------------------------------------------------------------


def staggered_order(y):
    """psi_i = (-1)^i y_i along the last axis."""
    y = np.asarray(y, dtype=float)
    sign = np.where(np.arange(y.shape[-1]) % 2 == 0, 1.0, -1.0)
    return sign * y


def kink_analysis(y, ring=False, threshold=0.1, floor=0.0):
    """Kinks in one transverse profile.

    Ions with ``|psi| < threshold * max|psi|`` are skipped; a kink sits
    between consecutive unmasked ions of opposite staggered sign.  Returns
    ``(count, positions, linear_phase)`` with ``positions`` the index of the
    ion on the left of each sign change.  On a ring the wrap-around pair is
    included.  ``max|psi| <= floor`` means the chain is still linear.
    """
    psi = staggered_order(y)
    n = len(psi)
    amp = float(np.max(np.abs(psi))) if n else 0.0
    if amp <= floor or amp == 0.0:
        return 0, [], True
    keep = np.nonzero(np.abs(psi) >= threshold * amp)[0]
    sg = np.sign(psi[keep])
    flips = np.nonzero(sg[1:] != sg[:-1])[0]
    pos = [int(keep[i]) for i in flips]
    if ring and len(keep) > 1 and sg[-1] != sg[0]:
        pos.append(int(keep[-1]))
    count = min(len(pos), max(n - 2, 0))
    return count, pos[:count], False


def count_kinks(state: ChainState, config: SimConfig) -> KinkReport:
    y = state.positions[:, 1]
    count, pos, linear = kink_analysis(
        y, config.geometry == "ring", config.kink_threshold, config.linear_floor * config.spacing
    )
    return KinkReport(count, pos, staggered_order(y).tolist(), linear,
                      trajectory_meta={"seed": state.seed, "index": state.index,
                                       "protocol": protocol_to_dict(config.protocol)})


def measure_temperature(state: ChainState, config: SimConfig) -> float:
    """Kinetic temperature m <v^2> over all velocity components."""
    return config.mass * float(np.mean(state.velocities**2))


def sample_temperature(config: SimConfig, n_steps: int, seed: int = 0, n_traj: int = 1,
                       burn_in: int = 0, protocol_time=None) -> float:
    """Time and ensemble average of the kinetic temperature at fixed drive."""
    b = _init_batch(config, seed, range(n_traj))
    tp = config.t_start if protocol_time is None else protocol_time
    if burn_in:
        b.advance(burn_in, protocol_time=tp)
    acc = [0.0]

    def grab(batch):
        acc[0] += float(np.mean(batch.vel**2))

    b.advance(n_steps, protocol_time=tp, frame_cb=grab)
    if np.any(b.aborted):
        raise IonCrossingError(f"{int(b.aborted.sum())} trajectories lost axial order")
    return config.mass * acc[0] / n_steps


# -- runs --------------------------------------------------------------------


def _n_steps(span, dt):
    return int(round(span / dt))


def run_ensemble(config: SimConfig, seed: int, indices, dump=None, dump_stride=10):
    """Run trajectories ``indices`` of the ensemble with master ``seed`` as one
    batch and return their kink reports (in the order of ``indices``)."""
    indices = list(indices)
    t0 = time.perf_counter()
    b = _init_batch(config, seed, indices)
    cb = None
    if dump is not None:
        cb = dump.frame
        dump.frame(b)
    b.advance(_n_steps(config.t_end - config.t_start, config.dt), frame_cb=cb, stride=dump_stride)
    n_rel = _n_steps(config.relax_time, config.dt)
    if n_rel:
        b.advance(n_rel, protocol_time=config.t_end, frame_cb=cb, stride=dump_stride)
    wall = time.perf_counter() - t0
    out = []
    for j, idx in enumerate(indices):
        st = b.state(j, seed, idx)
        rep = count_kinks(st, config)
        rep.aborted = bool(b.aborted[j])
        rep.trajectory_meta["wall_time"] = wall / len(indices)
        out.append(rep)
    return out


def run_quench(config: SimConfig, seed: int = 0, index: int = 0, dump_path=None,
               dump_stride=10) -> KinkReport:
    """Single trajectory: equilibrate, quench, relax, count kinks."""
    dump = TrajectoryWriter(dump_path) if dump_path is not None else None
    try:
        rep = run_ensemble(config, seed, [index], dump=dump, dump_stride=dump_stride)[0]
    finally:
        if dump is not None:
            dump.close()
    if rep.aborted:
        raise IonCrossingError(f"ion crossing in trajectory {index} (seed {seed})")
    return rep


class TrajectoryWriter:
    """CSV frames ``t, x_0, y_0, ..., vx_0, vy_0, ...`` of the first trajectory."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._header = False

    def frame(self, batch):
        n = batch.pos.shape[1]
        if not self._header:
            cols = ["t"]
            cols += [f"{c}_{i}" for i in range(n) for c in ("x", "y")]
            cols += [f"{c}_{i}" for i in range(n) for c in ("vx", "vy")]
            self._w.writerow(cols)
            self._header = True
        row = [repr(float(batch.t))]
        row += [repr(float(v)) for v in batch.pos[0].ravel()]
        row += [repr(float(v)) for v in batch.vel[0].ravel()]
        self._w.writerow(row)

    def close(self):
        self._fh.close()


def ensemble_kinks(config: SimConfig, n_seeds: int, seed: int = 0, batch_size: int = 256,
                   start_index: int = 0):
    """Kink counts of trajectories ``start_index .. start_index + n_seeds - 1``.

    Returns ``(counts, n_aborted)``; aborted trajectories are left out of
    ``counts``.
    """
    counts = []
    aborted = 0
    idx = list(range(start_index, start_index + n_seeds))
    for lo in range(0, len(idx), batch_size):
        for rep in run_ensemble(config, seed, idx[lo:lo + batch_size]):
            if rep.aborted:
                aborted += 1
            else:
                counts.append(rep.kink_count)
    return np.array(counts, dtype=float), aborted
