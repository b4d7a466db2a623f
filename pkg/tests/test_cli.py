import json
import math
import re
import subprocess
import sys
from pathlib import Path

import pytest

from kzq import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

RING = {"n_ions": 8, "eta": 0.1, "kT": 1e-6, "t_start": -2.0, "t_end": 20.0,
        "equilibration_time": 5.0, "relax_time": 5.0}


def _cfg(tmp_path, d, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d) if isinstance(d, dict) else d)
    return str(p)


def _run(capsys, tmp_path, command, config, *extra):
    code = cli.main([command, "--config", config, "--out", str(tmp_path / "out"), "--jobs", "1", *extra])
    out, err = capsys.readouterr()
    return code, out, err


# -- predict ---------------------------------------------------------------------


def test_predict_happy_path(capsys, tmp_path):
    code, out, _ = _run(capsys, tmp_path, "predict", str(CONFIGS / "predict_linear.json"))
    assert code == 0
    d = json.loads(out)
    assert d["density"] > 0 and d["regime"] == "overdamped"
    assert d["t_hat"] > 0 and d["no_defects"] is False
    assert (tmp_path / "out" / f"prediction-{d['config_hash']}.json").exists()


def test_predict_no_defects(capsys, tmp_path):
    code, out, _ = _run(capsys, tmp_path, "predict", str(CONFIGS / "predict_osc_no_defects.json"))
    assert code == 0
    d = json.loads(out)
    assert d["no_defects"] is True and d["density"] == 0.0 and d["freeze_out"] is None


def test_malformed_json(capsys, tmp_path):
    code, _, err = _run(capsys, tmp_path, "predict", _cfg(tmp_path, '{"schema_version": 1,'))
    assert code == 2 and "malformed JSON" in err


@pytest.mark.parametrize("patch,key", [
    ({"paramz": {}}, "paramz"),
    ({"params": {"eta": 1.0, "etta": 2.0}}, "params.etta"),
    ({"protocol": {"kind": "linear", "tau_q": 1.0, "rate": 2.0}}, "protocol.rate"),
])
def test_unknown_key_named(capsys, tmp_path, patch, key):
    d = json.loads((CONFIGS / "predict_linear.json").read_text())
    d.update(patch)
    code, _, err = _run(capsys, tmp_path, "predict", _cfg(tmp_path, d))
    assert code != 0 and key in err


def test_schema_version_mismatch(capsys, tmp_path):
    d = json.loads((CONFIGS / "predict_linear.json").read_text())
    d["schema_version"] = 2
    code, _, err = _run(capsys, tmp_path, "predict", _cfg(tmp_path, d))
    assert code == 2 and "schema_version" in err


def test_missing_section(capsys, tmp_path):
    code, _, err = _run(capsys, tmp_path, "predict",
                        _cfg(tmp_path, {"schema_version": 1, "protocol": {"kind": "linear", "tau_q": 1.0}}))
    assert code == 2 and "params" in err


def test_invalid_value_is_config_error(capsys, tmp_path):
    d = json.loads((CONFIGS / "predict_linear.json").read_text())
    d["protocol"]["tau_q"] = -1.0
    code, _, err = _run(capsys, tmp_path, "predict", _cfg(tmp_path, d))
    assert code == 2 and "protocol" in err


# -- simulate -----------------------------------------------------------------------


def _sim_cfg(tau=20.0, **extra):
    return {"schema_version": 1, "seed": 5, "protocol": {"kind": "linear", "tau_q": tau},
            "sim": dict(RING, t_start=-0.1 * tau, t_end=tau), **extra}


def test_simulate_is_deterministic(capsys, tmp_path):
    cfg = _cfg(tmp_path, _sim_cfg())
    c1, o1, _ = _run(capsys, tmp_path, "simulate", cfg)
    c2, o2, _ = _run(capsys, tmp_path, "simulate", cfg)
    assert c1 == c2 == 0 and o1 == o2
    d = json.loads(o1)
    assert "wall_time" not in o1
    assert {"kink_count", "kink_positions", "config_hash"} <= set(d)


def test_simulate_seed_flag_changes_hash(capsys, tmp_path):
    cfg = _cfg(tmp_path, _sim_cfg())
    _, o1, _ = _run(capsys, tmp_path, "simulate", cfg, "--seed", "1")
    _, o2, _ = _run(capsys, tmp_path, "simulate", cfg, "--seed", "2")
    assert json.loads(o1)["config_hash"] != json.loads(o2)["config_hash"]


def test_simulate_dump_trajectory(capsys, tmp_path):
    cfg = _cfg(tmp_path, _sim_cfg(simulate={"dump_stride": 50}))
    code, out, _ = _run(capsys, tmp_path, "simulate", cfg, "--dump-trajectory")
    assert code == 0
    h = json.loads(out)["config_hash"]
    traj = tmp_path / "out" / f"trajectory-{h}.csv"
    assert traj.exists()
    lines = traj.read_text().splitlines()
    assert lines[0].startswith("t,x_0,y_0") and len(lines) > 2


def test_simulate_adiabatic_has_no_kinks(capsys, tmp_path):
    code, out, _ = _run(capsys, tmp_path, "simulate", _cfg(tmp_path, _sim_cfg(tau=400.0)))
    assert code == 0 and json.loads(out)["kink_count"] == 0


def test_simulate_bad_sim_key(capsys, tmp_path):
    d = _sim_cfg()
    d["sim"]["ions"] = 4
    code, _, err = _run(capsys, tmp_path, "simulate", _cfg(tmp_path, d))
    assert code == 2 and "sim.ions" in err


# -- sweep ------------------------------------------------------------------------------


def test_sweep_predictor_csv(capsys, tmp_path):
    d = json.loads((CONFIGS / "sweep_homogeneous.json").read_text())
    d["sweep"].update(points=20)
    d["sweep"].pop("fit_range")
    code, out, _ = _run(capsys, tmp_path, "sweep", _cfg(tmp_path, d))
    assert code == 0
    h = json.loads(out)["config_hash"]
    rows = (tmp_path / "out" / f"sweep-{h}.csv").read_text().splitlines()
    assert rows[0] == "tau_q,density,stderr,n_samples,source" and len(rows) == 21
    assert (tmp_path / "out" / f"sweep-{h}.plot.txt").exists()
    assert not (tmp_path / "out" / f"fit-{h}.json").exists()


def test_sweep_fit_range_flag(capsys, tmp_path):
    d = json.loads((CONFIGS / "sweep_homogeneous.json").read_text())
    d["sweep"].pop("fit_range")
    code, out, _ = _run(capsys, tmp_path, "sweep", _cfg(tmp_path, d), "--fit-range", "1e4:1e6")
    assert code == 0
    h = json.loads(out)["config_hash"]
    fit = json.loads((tmp_path / "out" / f"fit-{h}.json").read_text())
    assert fit["fit_range"][0] == pytest.approx(1e4) and fit["n_points"] == 21


def test_sweep_homogeneous_exponent(capsys, tmp_path):
    code, out, _ = _run(capsys, tmp_path, "sweep", str(CONFIGS / "sweep_homogeneous.json"))
    assert code == 0
    fit = json.loads(out)["fit"]
    assert fit["exponent"] == pytest.approx(-0.25, abs=0.02)
    assert fit["r_squared"] > 0.99


def test_sweep_bad_fit_range(capsys, tmp_path):
    code, _, err = _run(capsys, tmp_path, "sweep", str(CONFIGS / "sweep_homogeneous.json"),
                        "--fit-range", "1e3-1e5")
    assert code == 2 and "--fit-range" in err


def test_sweep_all_gaps_exit_one(capsys, tmp_path):
    d = {"schema_version": 1, "protocol": {"kind": "tabulated", "tau_q": 1.0,
                                            "samples": [[0.0, 0.0], [1.0, 1.0]]},
         "params": {"eta": 1.0}, "sweep": {"grid": [1, 2, 3, 4, 5]}}
    code, _, _ = _run(capsys, tmp_path, "sweep", _cfg(tmp_path, d))
    assert code == 1


# -- compare ----------------------------------------------------------------------------


def _cmp_cfg(pa, pb, **sim_extra):
    return {"schema_version": 1, "seed": 0,
            "sim": dict(RING, t_start=-0.05, t_end=0.5, **sim_extra),
            "compare": {"protocol_a": pa, "protocol_b": pb, "n_seeds": 6, "n_boot": 200}}


def test_compare_identical(capsys, tmp_path):
    p = {"kind": "linear", "tau_q": 0.5}
    code, out, _ = _run(capsys, tmp_path, "compare", _cfg(tmp_path, _cmp_cfg(p, p)))
    assert code == 0
    d = json.loads(out)
    assert d["reduction"] == pytest.approx(0.0, abs=1e-12) or d["undefined"]
    assert d["ensemble_sizes"] == {"a": 6, "b": 6}
    assert (tmp_path / "out" / f"compare-{d['config_hash']}.json").exists()


def test_compare_unknown_protocol_key(capsys, tmp_path):
    p = {"kind": "linear", "tau_q": 0.5}
    d = _cmp_cfg(p, dict(p, lamda=2.0))
    code, _, err = _run(capsys, tmp_path, "compare", _cfg(tmp_path, d))
    assert code == 2 and "compare.protocol_b.lamda" in err


# -- misc --------------------------------------------------------------------------------


def test_output_names_carry_hash(capsys, tmp_path):
    _run(capsys, tmp_path, "predict", str(CONFIGS / "predict_linear.json"))
    _run(capsys, tmp_path, "predict", str(CONFIGS / "predict_osc_no_defects.json"))
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert len(names) == 2
    assert all(re.fullmatch(r"prediction-[0-9a-f]{12}\.json", n) for n in names)


def test_nonfinite_values_are_strings():
    assert cli._dump({"x": math.inf, "y": [math.nan]}) == '{\n  "x": "inf",\n  "y": [\n    "nan"\n  ]\n}'


def test_help_text():
    r = subprocess.run([sys.executable, "-m", "kzq", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in cli.COMMANDS:
        assert cmd in r.stdout
    assert "dimensionless" in r.stdout
    r = subprocess.run([sys.executable, "-m", "kzq", "sweep", "--help"], capture_output=True, text=True)
    assert "--fit-range" in r.stdout and "--dump-trajectory" in r.stdout
