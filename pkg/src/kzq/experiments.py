"""Sweeps over the quench time, log-log slopes and fits, saturation
detection and protocol comparisons.

A sweep evaluates a *source* on a grid of tau_q values.  Two sources exist:
:class:`PredictorSource` wraps :func:`kzq.ef_core.defect_density` and
:class:`SimulatorSource` runs Langevin ensembles.  Both serialize to a plain
dict so a :class:`SweepResult` carries everything needed to rerun it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ef_core
from . import langevin_sim as sim
from .errors import FitError
from .quench import protocol_from_dict, protocol_to_dict

log = logging.getLogger(__name__)

CSV_COLUMNS = ("tau_q", "density", "stderr", "n_samples", "source")


def config_hash(obj) -> str:
    """Short SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


# -- sources ------------------------------------------------------------------


def params_to_dict(p: ef_core.ScalingParams) -> dict:
    return asdict(p)


def params_from_dict(d: dict) -> ef_core.ScalingParams:
    return ef_core.ScalingParams(**d)


@dataclass(frozen=True)
class PredictorSource:
    """Extended-formulation prediction at each tau_q.

    ``geometry`` is ``"homogeneous"`` or ``{"kind": "harmonic", "n_ions": N,
    "nu": nu}``.  ``quantity`` selects ``density`` (1/xi_hat), ``count``
    (L/xi_hat, clamped) or ``corrected_count``.
    """

    params: ef_core.ScalingParams
    protocol: object
    geometry: object = "homogeneous"
    quantity: str = "density"
    v_eval: str = "center"
    loss_p: float | None = None
    kind = "predictor"

    def _geometry(self):
        g = self.geometry
        if g == "homogeneous":
            return g
        if isinstance(g, dict) and g.get("kind") == "harmonic":
            p = self.params
            return ef_core.HarmonicChain.from_trap(int(g["n_ions"]), float(g["nu"]),
                                                   p.mass, p.coulomb, p.charge)
        raise ValueError(f"unknown geometry {g!r}")

    def evaluate(self, tau_q, n_seeds=1, seed=0):
        est = ef_core.defect_density(self.params, self.protocol.with_tau_q(tau_q),
                                     self._geometry(), loss_p=self.loss_p, v_eval=self.v_eval)
        return float(getattr(est, self.quantity)), 0.0, 1

    def snapshot(self):
        return {"kind": self.kind, "params": params_to_dict(self.params),
                "protocol": protocol_to_dict(self.protocol), "geometry": self.geometry,
                "quantity": self.quantity, "v_eval": self.v_eval, "loss_p": self.loss_p}


@dataclass(frozen=True)
class SimulatorSource:
    """Mean kink count of a Langevin ensemble at each tau_q.

    With ``scale_times`` the run window ``[t_start, t_end]`` scales with
    tau_q relative to the template's, which keeps the start and end values
    of a linear ramp fixed.
    """

    config: sim.SimConfig
    scale_times: bool = True
    batch_size: int = 256
    kind = "simulator"

    def config_for(self, tau_q):
        cfg = self.config
        k = tau_q / cfg.protocol.tau_q
        kw = {"protocol": cfg.protocol.with_tau_q(tau_q)}
        if self.scale_times:
            kw["t_start"] = cfg.t_start * k
            kw["t_end"] = cfg.t_end * k
        return cfg.replace(**kw)

    def evaluate(self, tau_q, n_seeds=1, seed=0):
        counts, aborted = sim.ensemble_kinks(self.config_for(tau_q), n_seeds, seed,
                                             batch_size=self.batch_size)
        n = len(counts)
        if n == 0:
            raise RuntimeError(f"all {aborted} trajectories aborted")
        se = float(np.std(counts, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        return float(np.mean(counts)), se, n

    def snapshot(self):
        return {"kind": self.kind, "config": self.config.to_dict(),
                "scale_times": self.scale_times}


def source_from_snapshot(d: dict):
    if d["kind"] == "predictor":
        return PredictorSource(params_from_dict(d["params"]), protocol_from_dict(d["protocol"]),
                               d["geometry"], d["quantity"], d.get("v_eval", "center"),
                               d.get("loss_p"))
    if d["kind"] == "simulator":
        return SimulatorSource(sim.SimConfig.from_dict(d["config"]), d.get("scale_times", True))
    raise ValueError(f"unknown source kind {d['kind']!r}")


# -- sweep results ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    tau_q: float
    density: float
    stderr: float
    n_samples: int
    source: str
    error: str | None = None

    @property
    def is_gap(self):
        return self.error is not None or not math.isfinite(self.density)

    @property
    def flagged(self):
        """Gap, or simulator row without a usable standard error."""
        return self.is_gap or not math.isfinite(self.stderr)


@dataclass
class SweepResult:
    rows: list
    params_snapshot: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.tau_q)

    @property
    def tau_q(self):
        return np.array([r.tau_q for r in self.rows])

    @property
    def density(self):
        return np.array([r.density for r in self.rows])

    @property
    def stderr(self):
        return np.array([r.stderr for r in self.rows])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r.tau_q), repr(r.density), repr(r.stderr), r.n_samples, r.source])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text, params_snapshot=None):
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            dens = float(rec["density"])
            rows.append(SweepRow(float(rec["tau_q"]), dens, float(rec["stderr"]),
                                 int(rec["n_samples"]), rec["source"],
                                 None if math.isfinite(dens) else "gap"))
        return cls(rows, params_snapshot or {})

    def to_json(self, path=None):
        text = json.dumps({"rows": [asdict(r) for r in self.rows],
                           "params_snapshot": self.params_snapshot},
                          indent=2, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls([SweepRow(**r) for r in d["rows"]], d.get("params_snapshot", {}))

    def rerun(self, jobs=1):
        """Rebuild the source from the snapshot and sweep again."""
        snap = self.params_snapshot
        return sweep_tau_q(snap["grid"], source_from_snapshot(snap["source"]),
                           n_seeds=snap["n_seeds"], seed=snap["seed"], jobs=jobs)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _evaluate_point(source, tau_q, n_seeds, seed):
    try:
        val, se, n = source.evaluate(tau_q, n_seeds, seed)
        return SweepRow(float(tau_q), val, se, n, source.kind)
    except Exception as exc:  # recorded as a gap row; the sweep carries on
        log.warning("sweep point tau_q=%.4g failed: %s", tau_q, exc)
        return SweepRow(float(tau_q), math.nan, math.nan, 0, source.kind,
                        f"{type(exc).__name__}: {exc}")


def sweep_tau_q(grid, source, n_seeds=1, seed=0, jobs=1) -> SweepResult:
    """Evaluate ``source`` at every tau_q in ``grid``.

    Every grid point reuses the same trajectory seeds, so simulator sweeps
    compare quench times with common random numbers.  Failed points become
    gap rows.  ``jobs > 1`` evaluates points in worker processes; the rows
    are keyed by grid index so the result does not depend on scheduling.
    """
    grid = [float(g) for g in grid]
    if len(grid) < 5:
        raise ValueError("a sweep needs at least 5 grid points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_evaluate_point, source, g, n_seeds, seed) for g in grid]
            rows = [f.result() for f in futs]
    else:
        rows = [_evaluate_point(source, g, n_seeds, seed) for g in grid]
    snap = {"source": source.snapshot(), "grid": grid, "n_seeds": n_seeds, "seed": seed}
    snap["hash"] = config_hash(snap)
    return SweepResult(rows, snap)


# -- slopes and fits --------------------------------------------------------------


def _log_xy(sweep):
    t = sweep.tau_q
    d = sweep.density
    ok = np.isfinite(d) & (d > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(t), np.where(ok, np.log(np.where(ok, d, 1.0)), np.nan), ok


def local_slope(sweep: SweepResult, window: int = 5):
    """Centred least-squares slope of log density against log tau_q.

    Returns ``(tau_q, slope)`` pairs for every row with a full window; the
    slope is NaN (a gap) when the window holds a non-positive or missing
    density.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and at least 3")
    n = len(sweep.rows)
    if n < window:
        raise ValueError(f"need at least {window} rows, have {n}")
    x, y, ok = _log_xy(sweep)
    h = window // 2
    out = []
    for i in range(h, n - h):
        sl = slice(i - h, i + h + 1)
        if not np.all(ok[sl]):
            out.append((float(sweep.rows[i].tau_q), math.nan))
            continue
        xs = x[sl] - x[sl].mean()
        out.append((float(sweep.rows[i].tau_q), float(np.dot(xs, y[sl] - y[sl].mean()) / np.dot(xs, xs))))
    return out


@dataclass(frozen=True)
class PowerLawFit:
    """``density = prefactor * tau_q**exponent`` (exponent negative for decay)."""

    exponent: float
    prefactor: float
    r_squared: float
    fit_range: tuple
    exponent_stderr: float = math.nan
    n_points: int = 0

    def to_dict(self):
        return asdict(self)


def fit_power_law(sweep: SweepResult, fit_range=None) -> PowerLawFit:
    """Weighted least squares in log-log space.

    Weights are ``(density / stderr)**2`` (inverse variance of log density)
    when every in-range row has a positive standard error, otherwise uniform.
    """
    x, y, ok = _log_xy(sweep)
    t = sweep.tau_q
    sel = ok.copy()
    if fit_range is not None:
        lo, hi = fit_range
        sel &= (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    if sel.sum() < 5:
        raise FitError(f"power-law fit needs at least 5 in-range rows, have {int(sel.sum())}")
    se = sweep.stderr[sel]
    d = sweep.density[sel]
    if np.all(np.isfinite(se)) and np.all(se > 0):
        w = (d / se) ** 2
    else:
        w = np.ones(int(sel.sum()))
    xs, ys = x[sel], y[sel]
    sw = w.sum()
    xm = np.dot(w, xs) / sw
    ym = np.dot(w, ys) / sw
    sxx = np.dot(w, (xs - xm) ** 2)
    if sxx == 0:
        raise FitError("fit range spans a single tau_q")
    b = np.dot(w, (xs - xm) * (ys - ym)) / sxx
    a = ym - b * xm
    resid = ys - (a + b * xs)
    ss_res = float(np.dot(w, resid**2))
    ss_tot = float(np.dot(w, (ys - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(xs) - 2
    b_se = math.sqrt(ss_res / dof / sxx) if dof > 0 else math.nan
    rng = (float(t[sel].min()), float(t[sel].max()))
    return PowerLawFit(float(b), float(math.exp(a)), float(min(max(r2, 0.0), 1.0)), rng,
                       b_se, int(sel.sum()))


def saturation_detect(sweep: SweepResult, slope_tol: float = 0.05, window: int = 3):
    """Upper end of the fast-quench plateau.

    Returns the largest grid tau_q such that the local slope is below
    ``slope_tol`` in magnitude there and at every smaller grid point, or
    ``None`` when the first slope already exceeds the tolerance.
    """
    t = sweep.tau_q
    if len(t) < window or t[-1] / t[0] < 100.0 * (1 - 1e-9):
        raise ValueError("saturation detection needs a sweep spanning two decades")
    boundary = None
    for tq, s in local_slope(sweep, window):
        if not (math.isfinite(s) and abs(s) < slope_tol):
            break
        boundary = tq
    return boundary


# -- protocol comparison ------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    mu_a: float
    mu_b: float
    se_a: float
    se_b: float
    n_a: int
    n_b: int
    reduction: float
    reduction_lower95: float
    slowdown: float
    undefined: bool
    n_pairs: int
    aborted: tuple = (0, 0)

    def to_dict(self):
        return asdict(self)


def _check_comparable(a: sim.SimConfig, b: sim.SimConfig):
    da, db = a.to_dict(), b.to_dict()
    da.pop("protocol"), db.pop("protocol")
    auto = a._dt_auto and b._dt_auto
    if auto:
        da.pop("dt"), db.pop("dt")
    diff = sorted(k for k in da if da[k] != db[k])
    if diff:
        raise ValueError(f"configs differ in more than the protocol: {', '.join(diff)}")
    if auto and a.dt != b.dt:
        dt = min(a.dt, b.dt)
        return a.replace(dt=dt), b.replace(dt=dt)
    return a, b


def _kink_chunk(cfg, seed, indices):
    reps = sim.run_ensemble(cfg, seed, indices)
    return [(r.kink_count, r.aborted) for r in reps]


def _ensemble(cfg, n, seed, jobs, batch=256):
    idx = list(range(n))
    chunks = [idx[i:i + batch] for i in range(0, n, batch)]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_kink_chunk, [cfg] * len(chunks), [seed] * len(chunks), chunks))
    else:
        parts = [_kink_chunk(cfg, seed, c) for c in chunks]
    flat = [x for p in parts for x in p]
    return np.array([c for c, _ in flat], dtype=float), np.array([ab for _, ab in flat])


def reduction_stats(a, b, n_boot=4000, boot_seed=12345):
    """Reduction ``1 - mean(b)/mean(a)`` and its one-sided 95% lower bound
    from a paired percentile bootstrap."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mu_a = a.mean()
    if mu_a == 0:
        return math.nan, math.nan
    red = 1.0 - b.mean() / mu_a
    rng = np.random.default_rng(boot_seed)
    idx = rng.integers(0, len(a), size=(n_boot, len(a)))
    ma = a[idx].mean(axis=1)
    mb = b[idx].mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        boot = np.where(ma > 0, 1.0 - mb / ma, -np.inf)
    return float(red), float(np.quantile(boot, 0.05, method="lower"))


def compare_protocols(config_a: sim.SimConfig, config_b: sim.SimConfig, n_seeds: int,
                      seed: int = 0, jobs: int = 1, n_boot: int = 4000) -> ComparisonReport:
    """Kink statistics of two protocols on otherwise identical configs.

    Trajectory ``i`` of both ensembles uses the same noise stream, so the
    bootstrap resamples pairs.  ``slowdown`` is ``(mu_a / mu_b)**4``.
    """
    if n_seeds < 2:
        raise ValueError("need at least two seeds per protocol")
    config_a, config_b = _check_comparable(config_a, config_b)
    ka, ab_a = _ensemble(config_a, n_seeds, seed, jobs)
    kb, ab_b = _ensemble(config_b, n_seeds, seed, jobs)
    keep = ~(ab_a | ab_b)
    a, b = ka[keep], kb[keep]
    va, vb = ka[~ab_a], kb[~ab_b]
    mu_a, mu_b = float(va.mean()), float(vb.mean())
    se_a = float(va.std(ddof=1) / math.sqrt(len(va)))
    se_b = float(vb.std(ddof=1) / math.sqrt(len(vb)))
    undefined = mu_a == 0
    if undefined:
        red = lo = math.nan
    else:
        red, lo = reduction_stats(a, b, n_boot)
        red = 1.0 - mu_b / mu_a
    slowdown = math.inf if mu_b == 0 else (mu_a / mu_b) ** 4
    return ComparisonReport(mu_a, mu_b, se_a, se_b, len(va), len(vb), red, lo, slowdown,
                            undefined, int(keep.sum()), (int(ab_a.sum()), int(ab_b.sum())))
