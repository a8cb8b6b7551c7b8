import json
import os

import numpy as np
import pytest

from gfdmflow import bundled_case_path, config as cfg_mod, load_bundled, parse_config
from gfdmflow.cli import main
from gfdmflow.errors import ConfigError

TINY = {
    "name": "tiny",
    "geometry": {
        "rectangle": {
            "x0": 0.0, "y0": 0.0, "x1": 60.0, "y1": 20.0,
            "segments": {"left": "G1", "right": "G2", "top": "G3", "bottom": "G4"},
        }
    },
    "cloud": {"type": "cartesian", "dx": 5.0, "dy": 5.0},
    "rm_mult": 1.6,
    "props": {
        "phi_0": 0.3, "c_t": 0.0, "c_temp": 0.0, "mu_0": 5.0, "alpha_t": 0.0,
        "lambda_l": 0.2, "lambda_r": 3.0, "rho_l": 1000.0, "rho_r": 2700.0,
        "c_l": 4200.0, "c_r": 200.0,
        "permeability": {"type": "uniform", "k": 500.0},
    },
    "initial": {"p": 25.0, "T": 60.0},
    "bcs": {
        "G1": {"p": {"kind": "dirichlet", "value": 25.0},
               "T": {"kind": "dirichlet", "value": 40.0}},
        "G2": {"p": {"kind": "dirichlet", "value": 10.0},
               "T": {"kind": "dirichlet", "value": 60.0}},
        "G3": {"p": {"kind": "derivative"}, "T": {"kind": "derivative"}},
        "G4": {"p": {"kind": "derivative"}, "T": {"kind": "derivative"}},
    },
    "schedule": {"dt": 0.5, "t_end": 2.0, "snapshots": [2.0]},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    cfg = dict(TINY)
    cfg["output"] = {"dir": str(tmp_path / "out")}
    path.write_text(json.dumps(cfg))
    return str(path)


def test_bundled_case_3_1_values(case31):
    assert case31.geometry.is_rectangle()
    assert case31.cloud_spec == {"type": "cartesian", "dx": 5.0, "dy": 5.0}
    assert case31.bcs["G1"]["p"].value == 25.0
    assert case31.bcs["G2"]["p"].value == 10.0
    assert case31.bcs["G1"]["T"].value == 40.0
    assert case31.bcs["G2"]["T"].value == 60.0
    for seg in ("G3", "G4"):
        for fld in ("p", "T"):
            bc = case31.bcs[seg][fld]
            assert bc.kind == "derivative" and bc.h == 0.0 and bc.l == 1.0 and bc.q == 0.0
    assert case31.props.c_t == 0.0 and case31.props.alpha_t == 0.0
    assert case31.schedule.dt == 0.5


def test_bundled_case_3_2_values(case32):
    assert not case32.geometry.is_rectangle()
    perm = case32.props.permeability
    assert perm.kind == "exponential_x" and perm.k0 == 1200.0 and perm.decay_length == 320.0
    assert case32.props.c_t == 1e-5 and case32.props.c_temp == 1e-5
    assert case32.props.alpha_t == 0.05
    assert case32.initial == {"p": 10.0, "T": 60.0}
    assert case32.bcs["G1"]["p"].value == 15.0
    assert case32.bcs["G1"]["T"].value == 40.0


def test_missing_bc_rejected(tmp_path):
    bad = json.loads(json.dumps(TINY))
    del bad["bcs"]["G3"]["T"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "bcs.G3" in str(err.value)


def test_unknown_key_rejected(tmp_path):
    bad = json.loads(json.dumps(TINY))
    bad["props"]["bogus_knob"] = 1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "props.bogus_knob" in str(err.value)


def test_low_rm_mult_rejected(tmp_path):
    bad = json.loads(json.dumps(TINY))
    bad["rm_mult"] = 1.2
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError):
        parse_config(path)


def test_config_roundtrip(case31, case32, tmp_path):
    for cfg in (case31, case32):
        d1 = cfg_mod.to_dict(cfg)
        path = tmp_path / f"{cfg.name}.json"
        path.write_text(json.dumps(d1))
        reparsed = parse_config(path)
        assert cfg_mod.to_dict(reparsed) == d1


def test_cli_run(tiny_config, tmp_path, capsys):
    rc = main(["run", tiny_config, "--quiet"])
    assert rc == 0
    out = tmp_path / "out"
    assert (out / "snap_t000002.000.csv").exists()
    assert (out / "summary.txt").exists()


def test_cli_run_unreadable_path(capsys):
    rc = main(["run", "/nonexistent/nope.json"])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_cli_invalid_config_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 2


def test_cli_cloud_gen_and_info(tiny_config, tmp_path, capsys):
    cloud_file = tmp_path / "cloud.txt"
    rc = main(["cloud", "gen", tiny_config, "--cloud-file", str(cloud_file), "--quiet"])
    assert rc == 0
    assert cloud_file.exists()
    rc = main(["cloud", "info", tiny_config])
    assert rc == 0
    text = capsys.readouterr().out
    assert "h_avg" in text and "total=" in text


def test_cli_overrides(tiny_config, tmp_path, capsys):
    rc = main(["cloud", "info", tiny_config, "--dx", "2.5", "--rm-mult", "2.0"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "total=" in text
    # 60/2.5+1 = 25 columns, 20/2.5+1 = 9 rows of real nodes
    n_real = 25 * 9
    assert f"total={n_real +  2 * 23 + 4}" in text  # plus virtual nodes


def test_cli_dump_matrix(tiny_config, tmp_path):
    rc = main(["dump-matrix", tiny_config, "--step", "2", "--out", str(tmp_path / "m"), "--quiet"])
    assert rc == 0
    p = tmp_path / "m" / "pressure_step2.txt"
    t = tmp_path / "m" / "temperature_step2.txt"
    assert p.exists() and t.exists()
    line = [l for l in p.read_text().splitlines() if not l.startswith("#")][0]
    r, c, v = line.split()
    int(r), int(c), float(v)


def test_cli_verify_passes_on_tiny(tiny_config, capsys):
    rc = main(["verify", tiny_config, "--quiet"])
    text = capsys.readouterr().out
    assert rc == 0, text
    assert "PASS" in text


def test_cli_study(tiny_config, tmp_path, capsys):
    rc = main([
        "study", tiny_config, "--dx-list", "5", "--rm-mults", "1.6",
        "--out", str(tmp_path / "study"), "--quiet",
    ])
    assert rc == 0
    assert (tmp_path / "study" / "study.csv").exists()


def test_bundled_cases_parse_and_prepare():
    for name in ("case_3_1", "case_3_2"):
        cfg = load_bundled(name)
        prep = cfg_mod.prepare(cfg)
        assert prep.cloud.n_nodes > 100
        assert os.path.exists(bundled_case_path(name))
