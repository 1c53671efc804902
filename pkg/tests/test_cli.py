import json
import subprocess
import sys

import pytest
import yaml

from horoeq import cli

SMALL = {
    "experiments": {
        "horocycle_rate": {"T_list": [10.0, 100.0], "n_states": 3},
        "liouville": {"n_mc": 20_000, "length": 200.0, "n_curves": 2},
    }
}


def write_config(tmp_path, data, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_validate_exits_zero(tmp_path, capsys):
    assert cli.main(["validate", "--out", str(tmp_path)]) == 0
    assert "validate: PASS" in capsys.readouterr().out
    summary = json.loads((tmp_path / "validate" / "summary.json").read_text())
    assert summary["passed"] and all(summary["checks"].values())


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "horoeq.cli", "validate", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


@pytest.mark.parametrize("data, field", [
    ({"integrator": {"h": -1.0}}, "integrator"),
    ({"integrator": {"bogus": 1}}, "integrator.bogus"),
    ({"experiments": {"liouville": {"n_mc": "many"}}}, "liouville.n_mc"),
    ({"seed": 1.5}, "config.seed"),
    ({"surface": 3}, "surface"),
    ({"experiments": {"admissibility": {"refine": 1}}}, "admissibility.refine"),
    ({"experiments": {"bounds": {"energy_window": [0.5]}}}, "bounds.energy_window"),
    ({"observable": "reference:nothing"}, "observable"),
    ({"family": {"potentials": [[[0.0, 0.0]]]}}, "family"),
])
def test_invalid_config_exits_two(tmp_path, capsys, data, field):
    code = cli.main(["liouville", "--config", write_config(tmp_path, data), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 2
    assert "invalid configuration" in err and field in err


def test_unreadable_config(tmp_path, capsys):
    assert cli.main(["validate", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "config:" in capsys.readouterr().err


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    for d in ("a", "b"):
        assert cli.main(["horocycle-rate", "--config", cfg, "--out", str(tmp_path / d)]) in (0, 1)
    for f in ("summary.json", "results.csv"):
        assert (tmp_path / "a" / "horocycle_rate" / f).read_bytes() == (tmp_path / "b" / "horocycle_rate" / f).read_bytes()
    summary = json.loads((tmp_path / "a" / "horocycle_rate" / "summary.json").read_text())
    assert summary["config"]["experiment"]["T_list"] == [10.0, 100.0]


def test_seed_flag_changes_output(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    cli.main(["liouville", "--config", cfg, "--out", str(tmp_path / "s0"), "--seed", "0"])
    cli.main(["liouville", "--config", cfg, "--out", str(tmp_path / "s1"), "--seed", "1"])
    a = json.loads((tmp_path / "s0" / "liouville" / "summary.json").read_text())
    b = json.loads((tmp_path / "s1" / "liouville" / "summary.json").read_text())
    assert a["config_hash"] != b["config_hash"]
    assert a["estimates"] != b["estimates"]


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["validate"]) == 0
    assert (tmp_path / "env" / "validate" / "summary.json").exists()
