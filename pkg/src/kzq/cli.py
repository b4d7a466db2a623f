"""Command-line entry point.

    kzq predict  --config run.json
    kzq simulate --config run.json --seed 3 --dump-trajectory
    kzq sweep    --config run.json --fit-range 1e3:1e5 --jobs 4
    kzq compare  --config run.json

Configs are strict JSON with ``"schema_version": 1``; unknown keys are
rejected.  All quantities are dimensionless (mass, charge, Coulomb constant
and ring spacing equal one).  Every output file name carries a hash of the
effective config, so runs with different configs never overwrite each other.
Set ``KZQ_LOG`` (e.g. ``DEBUG``) to change the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import ef_core, experiments
from . import langevin_sim as sim
from .errors import ConfigError, KzqError
from .quench import protocol_from_dict

log = logging.getLogger("kzq")

SCHEMA_VERSION = 1
UNITS = "dimensionless: mass = charge = Coulomb constant = ring spacing = 1"

TOP_KEYS = {"schema_version", "description", "seed", "params", "protocol", "geometry",
            "predict", "sim", "simulate", "sweep", "compare"}
PREDICT_KEYS = {"loss_p", "v_eval"}
SIMULATE_KEYS = {"dump_stride", "index"}
SWEEP_KEYS = {"source", "grid", "tau_q_min", "tau_q_max", "points", "n_seeds", "window",
              "fit_range", "quantity", "slope_tol", "scale_times"}
COMPARE_KEYS = {"protocol_a", "protocol_b", "n_seeds", "n_boot"}
REQUIRED = {
    "predict": ("params", "protocol"),
    "simulate": ("sim", "protocol"),
    "sweep": ("sweep", "protocol"),
    "compare": ("sim", "compare"),
}


# -- config parsing -------------------------------------------------------------


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", key=where)
    for k in d:
        if k not in allowed:
            raise ConfigError("unknown key", key=f"{where}.{k}" if where else k)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    _check_keys(cfg, TOP_KEYS, "")
    if "schema_version" not in cfg:
        raise ConfigError("missing", key="schema_version")
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"expected {SCHEMA_VERSION}, got {cfg['schema_version']!r}",
                          key="schema_version")
    return cfg


def _require(cfg, command):
    for k in REQUIRED[command]:
        if k not in cfg:
            raise ConfigError(f"required by '{command}'", key=k)


def _build(cls, d, where, exclude=()):
    names = {f.name for f in fields(cls)} - set(exclude)
    _check_keys(d, names, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key=where) from exc


def parse_params(cfg) -> ef_core.ScalingParams:
    return _build(ef_core.ScalingParams, cfg["params"], "params")


def parse_protocol(d, where="protocol"):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", key=where)
    try:
        return protocol_from_dict(d)
    except ConfigError as exc:
        raise ConfigError("unknown key", key=f"{where}.{exc.key.split('.', 1)[1]}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key=where) from exc


def parse_sim(cfg, protocol) -> sim.SimConfig:
    d = cfg["sim"]
    names = {f.name for f in fields(sim.SimConfig)} - {"protocol"}
    _check_keys(d, names, "sim")
    try:
        return sim.SimConfig(protocol=protocol, **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key="sim") from exc


def parse_geometry(cfg):
    g = cfg.get("geometry", "homogeneous")
    if g == "homogeneous":
        return g
    if isinstance(g, dict):
        _check_keys(g, {"kind", "n_ions", "nu"}, "geometry")
        if g.get("kind") != "harmonic":
            raise ConfigError("kind must be 'harmonic'", key="geometry.kind")
        return {"kind": "harmonic", "n_ions": int(g.get("n_ions", 22)), "nu": float(g.get("nu", 1.0))}
    raise ConfigError("expected 'homogeneous' or a harmonic object", key="geometry")


# -- output helpers -----------------------------------------------------------------


def _hash(cfg, command, seed):
    return experiments.config_hash({"config": cfg, "command": command, "seed": seed})


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _clean(o):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, np.integer):
        return int(o)
    return o


def _dump(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


# -- commands -----------------------------------------------------------------------


def cmd_predict(cfg, args):
    """Predicted defect density, regime and freeze-out for one protocol."""
    _require(cfg, "predict")
    params = parse_params(cfg)
    protocol = parse_protocol(cfg["protocol"])
    opts = cfg.get("predict", {})
    _check_keys(opts, PREDICT_KEYS, "predict")
    src = experiments.PredictorSource(params, protocol, parse_geometry(cfg),
                                      v_eval=opts.get("v_eval", "center"), loss_p=opts.get("loss_p"))
    est = ef_core.defect_density(params, protocol, src._geometry(), loss_p=src.loss_p,
                                 v_eval=src.v_eval)
    h = _hash(cfg, "predict", None)
    out = {
        "config_hash": h,
        "units": UNITS,
        "no_defects": est.no_defects,
        "xi_hat": est.xi_hat,
        "density": est.density,
        "count": est.count,
        "kinks": est.kinks,
        "corrected_count": est.corrected_count,
        "regime": est.regime,
        "freeze_out": asdict(est.freeze_out) if est.freeze_out else None,
        "per_ion_xi": list(est.per_ion_xi) if est.per_ion_xi else None,
    }
    if est.freeze_out is not None:
        out["t_hat"] = est.freeze_out.t_hat
        out["t_hat_n"] = est.freeze_out.t_hat_n
    text = _dump(out)
    _write(Path(args.out) / f"prediction-{h}.json", text)
    print(text)
    return 0


def cmd_simulate(cfg, args):
    """One Langevin quench; writes the kink report (and optionally frames)."""
    _require(cfg, "simulate")
    protocol = parse_protocol(cfg["protocol"])
    sc = parse_sim(cfg, protocol)
    opts = cfg.get("simulate", {})
    _check_keys(opts, SIMULATE_KEYS, "simulate")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    h = _hash(cfg, "simulate", seed)
    out_dir = Path(args.out)
    dump = None
    if args.dump_trajectory:
        out_dir.mkdir(parents=True, exist_ok=True)
        dump = out_dir / f"trajectory-{h}.csv"
    rep = sim.run_quench(sc, seed=seed, index=int(opts.get("index", 0)), dump_path=dump,
                         dump_stride=int(opts.get("dump_stride", 10)))
    log.info("trajectory wall time %.3f s", rep.trajectory_meta.get("wall_time", math.nan))
    d = rep.to_dict()
    d.update(config_hash=h, units=UNITS, dt=sc.dt, omega_c2=sc.omega_c2)
    text = _dump(d)
    _write(out_dir / f"kinks-{h}.json", text)
    print(text)
    return 0


def _grid(sw):
    if "grid" in sw:
        return [float(g) for g in sw["grid"]]
    try:
        return np.logspace(math.log10(sw["tau_q_min"]), math.log10(sw["tau_q_max"]),
                           int(sw.get("points", 20))).tolist()
    except KeyError as exc:
        raise ConfigError("grid or tau_q_min/tau_q_max required", key=f"sweep.{exc.args[0]}") from exc


def _parse_range(text):
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError as exc:
        raise ConfigError(f"expected a:b, got {text!r}", key="--fit-range") from exc


def cmd_sweep(cfg, args):
    """Sweep tau_q with the predictor or the simulator; writes CSV, JSON, plot data."""
    _require(cfg, "sweep")
    sw = cfg["sweep"]
    _check_keys(sw, SWEEP_KEYS, "sweep")
    protocol = parse_protocol(cfg["protocol"])
    kind = sw.get("source", "predictor")
    if kind == "predictor":
        if "params" not in cfg:
            raise ConfigError("required by a predictor sweep", key="params")
        source = experiments.PredictorSource(parse_params(cfg), protocol, parse_geometry(cfg),
                                             quantity=sw.get("quantity", "density"))
    elif kind == "simulator":
        if "sim" not in cfg:
            raise ConfigError("required by a simulator sweep", key="sim")
        source = experiments.SimulatorSource(parse_sim(cfg, protocol),
                                             scale_times=bool(sw.get("scale_times", True)))
    else:
        raise ConfigError("must be 'predictor' or 'simulator'", key="sweep.source")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    grid = _grid(sw)
    res = experiments.sweep_tau_q(grid, source, n_seeds=int(sw.get("n_seeds", 1)), seed=seed,
                                  jobs=args.jobs)
    h = _hash(cfg, "sweep", seed)
    out = Path(args.out)
    if all(r.is_gap for r in res.rows):
        log.error("every sweep point failed")
        return 1
    res.params_snapshot["config_hash"] = h
    _write(out / f"sweep-{h}.csv", res.to_csv())
    _write(out / f"sweep-{h}.json", res.to_json())
    window = int(sw.get("window", 5))
    slopes = experiments.local_slope(res, window) if len(res.rows) >= window else []
    lines = ["# log10(tau_q) log10(density)"]
    lines += [f"{math.log10(r.tau_q):.10g} {math.log10(r.density):.10g}"
              for r in res.rows if not r.is_gap and r.density > 0]
    lines += ["", "", "# log10(tau_q) local_slope"]
    lines += [f"{math.log10(t):.10g} {s:.10g}" for t, s in slopes if math.isfinite(s)]
    _write(out / f"sweep-{h}.plot.txt", "\n".join(lines) + "\n")
    summary = {"config_hash": h, "units": UNITS, "rows": len(res.rows),
               "gaps": sum(r.is_gap for r in res.rows),
               "local_slope": [list(p) for p in slopes]}
    try:
        summary["saturation_boundary"] = experiments.saturation_detect(
            res, float(sw.get("slope_tol", 0.05)))
    except ValueError:
        summary["saturation_boundary"] = None
    fit_range = _parse_range(args.fit_range) if args.fit_range else sw.get("fit_range")
    if fit_range is not None:
        fit = experiments.fit_power_law(res, tuple(fit_range))
        _write(out / f"fit-{h}.json", _dump(dict(fit.to_dict(), config_hash=h)))
        summary["fit"] = fit.to_dict()
    text = _dump(summary)
    _write(out / f"summary-{h}.json", text)
    print(text)
    return 0


def cmd_compare(cfg, args):
    """Kink statistics of two protocols on the same chain and seeds."""
    _require(cfg, "compare")
    cmp_cfg = cfg["compare"]
    _check_keys(cmp_cfg, COMPARE_KEYS, "compare")
    for k in ("protocol_a", "protocol_b"):
        if k not in cmp_cfg:
            raise ConfigError("required", key=f"compare.{k}")
    a = parse_sim(cfg, parse_protocol(cmp_cfg["protocol_a"], "compare.protocol_a"))
    b = parse_sim(cfg, parse_protocol(cmp_cfg["protocol_b"], "compare.protocol_b"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    n = int(cmp_cfg.get("n_seeds", 200))
    rep = experiments.compare_protocols(a, b, n, seed=seed, jobs=args.jobs,
                                        n_boot=int(cmp_cfg.get("n_boot", 4000)))
    h = _hash(cfg, "compare", seed)
    d = rep.to_dict()
    d.update(config_hash=h, units=UNITS, reduction_percent=100 * rep.reduction,
             ensemble_sizes={"a": rep.n_a, "b": rep.n_b})
    text = _dump(d)
    _write(Path(args.out) / f"compare-{h}.json", text)
    print(text)
    return 0


COMMANDS = {"predict": cmd_predict, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "compare": cmd_compare}


def build_parser():
    p = argparse.ArgumentParser(
        prog="kzq",
        description="Defect formation across the linear-to-zigzag transition. Units are " + UNITS + ".",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=COMMANDS[name].__doc__)
        s.add_argument("--config", required=True, help="strict JSON run config")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        s.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--fit-range", default=None, help="tau_q interval a:b for a power-law fit")
        s.add_argument("--dump-trajectory", action="store_true",
                       help="write CSV frames of the simulated trajectory")
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("KZQ_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if not isinstance(exc, KzqError):
            print(f"invalid input: {exc}", file=sys.stderr)
            return 2
        print(f"numerical error in {type(exc).__module__}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    except KzqError as exc:
        print(f"numerical error in {type(exc).__module__}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
