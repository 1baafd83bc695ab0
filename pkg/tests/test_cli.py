import json
import subprocess
import sys

import pytest

from naghdi.cli import config_hash, main, parse_config, resolve_config


def test_mesh_command(tmp_path, capsys):
    out = tmp_path / "p.off"
    assert main(["mesh", "plate", "10", "--out", str(out)]) == 0
    assert "121 vertices, 200 triangles" in capsys.readouterr().out
    assert out.read_text().startswith("OFF")


def test_mesh_rejects_tiny_resolution(tmp_path):
    assert main(["mesh", "plate", "2", "--out", str(tmp_path / "p.off")]) == 1


def test_escape_check_passes(tmp_path):
    out = tmp_path / "cert.json"
    assert main(["escape-check", "--mesh", "plate:10", "--out", str(out)]) == 0
    cert = json.loads(out.read_text())
    assert cert["pass"] and cert["provenance"]["mesh_hash"]


def test_simulate_undamped_conserves(tmp_path):
    out = tmp_path / "run.csv"
    assert main(["simulate", "--mesh", "plate:8", "--a0", "0", "--dt", "1e-2", "--t-end", "1",
                 "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "run.summary.json").read_text())
    assert summary["energy_drift"] < 1e-9
    head = out.read_text().splitlines()
    assert head[0].startswith("# config_hash:")
    assert any(line.startswith("# mesh_hash:") for line in head[:8])


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--mesh", "plate:8", "--a0", "1", "--region", "collar",
            "--dt", "1e-2", "--t-end", "0.5"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_decay_reports_rate(tmp_path):
    out = tmp_path / "d.json"
    assert main(["decay", "--mesh", "plate:8", "--a0", "1", "--region", "uniform",
                 "--dt", "1e-2", "--t-end", "5", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["c2"] > 0


def test_control_short_horizon_exits_2(tmp_path, capsys):
    rc = main(["control", "--mesh", "plate:8", "--a0", "4", "--region", "collar",
               "--T", "0.02", "--dt", "2e-3", "--out", str(tmp_path / "f.csv")])
    assert rc == 2
    assert "time horizon too short" in capsys.readouterr().err


def test_unknown_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dt = 1e-3\nbogus = 4\n")
    assert main(["simulate", "--mesh", "plate:8", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_bad_mesh_path_exits_1(tmp_path):
    assert main(["simulate", "--mesh", str(tmp_path / "missing.off")]) == 1


def test_config_parsing():
    raw = parse_config("# comment\ndt = 0.5\nregion = collar\n")
    cfg = resolve_config(raw)
    assert cfg["dt"] == 0.5 and cfg["region"] == "collar"
    assert config_hash(cfg) == config_hash(resolve_config(dict(raw)))
    with pytest.raises(ValueError):
        resolve_config({"dt": -1.0})


def test_entry_point_usage_error():
    out = subprocess.run([sys.executable, "-m", "naghdi.cli", "simulate"],
                         capture_output=True, text=True)
    assert out.returncode == 1
