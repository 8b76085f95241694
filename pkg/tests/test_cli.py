import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from rpa_crystal import bands as bands_module
from rpa_crystal.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_PHYSICS, main
from rpa_crystal.config import ConfigError, config_hash, load_config, validate_config

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "data" / "golden"


def run(tmp_path, command, config, *extra):
    return main([command, "--config", str(config), "--output", str(tmp_path), *extra])


def read_table(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_config(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.mark.parametrize("command,name", [("bands", "bands.csv"), ("response", "response.csv"),
                                          ("epsm", "epsm.csv"), ("dynamics", "trajectory.csv")])
def test_golden_outputs(tmp_path, command, name):
    assert run(tmp_path, command, CONFIGS / "cosine_1d.yaml") == EXIT_OK
    head, got = read_table(tmp_path / name)
    ghead, want = read_table(GOLDEN / name)
    assert head == ghead
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)
    meta = json.loads((tmp_path / (name + ".meta.json")).read_text())
    assert meta["config_hash"] == config_hash(load_config(CONFIGS / "cosine_1d.yaml"))


def test_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert run(a, "response", CONFIGS / "cosine_1d.yaml") == EXIT_OK
    assert run(b, "response", CONFIGS / "cosine_1d.yaml", "--threads", "3") == EXIT_OK
    assert (a / "response.csv").read_bytes() == (b / "response.csv").read_bytes()


@pytest.mark.parametrize("config", ["cosine_1d.yaml", "scf_1d.yaml", "cubic_3d.yaml"])
def test_validate_passes(tmp_path, config, capsys):
    assert run(tmp_path, "validate", CONFIGS / config) == EXIT_OK
    report = json.loads((tmp_path / "validate.json").read_text())
    assert all(r["status"] in ("pass", "skipped") for r in report["checks"])
    assert "pass" in capsys.readouterr().out


def test_validate_catches_sign_error(tmp_path, monkeypatch):
    """Flipping the sign of the potential matrix must be caught by the independent checks."""
    original = bands_module.potential_matrix
    monkeypatch.setattr(bands_module, "potential_matrix", lambda pot, basis: -original(pot, basis))
    assert run(tmp_path, "validate", CONFIGS / "cosine_1d.yaml") == EXIT_NUMERIC
    report = json.loads((tmp_path / "validate.json").read_text())
    assert any(r["status"] == "FAIL" for r in report["checks"])


def test_metallic_exit_code_keeps_bands(tmp_path):
    assert run(tmp_path, "bands", CONFIGS / "free_1d.yaml") == EXIT_PHYSICS
    assert (tmp_path / "bands.csv").exists()
    assert not (tmp_path / "fermi.json").exists()


def test_frequency_outside_gap(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "cosine_1d.yaml").read_text())
    cfg["response"]["omegas"] = [5.0]
    assert run(tmp_path, "response", write_config(tmp_path, cfg)) == EXIT_PHYSICS


def test_missing_key(tmp_path, capsys):
    cfg = yaml.safe_load((CONFIGS / "cosine_1d.yaml").read_text())
    del cfg["e_cut"]
    assert run(tmp_path, "bands", write_config(tmp_path, cfg)) == EXIT_CONFIG
    assert "e_cut" in capsys.readouterr().err


def test_empty_and_unreadable(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert run(tmp_path, "bands", empty) == EXIT_CONFIG
    assert run(tmp_path, "bands", tmp_path / "missing.yaml") == EXIT_CONFIG
    broken = tmp_path / "broken.yaml"
    broken.write_text("dimension: [1\n")
    assert run(tmp_path, "bands", broken) == EXIT_CONFIG


def test_unknown_key_rejected():
    cfg = yaml.safe_load((CONFIGS / "cosine_1d.yaml").read_text())
    cfg["smearing"] = 0.1
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_dimension_mismatch():
    cfg = yaml.safe_load((CONFIGS / "cosine_1d.yaml").read_text())
    cfg["bz_grid"] = [9, 9]
    with pytest.raises(ConfigError):
        validate_config(cfg)
    cfg = yaml.safe_load((CONFIGS / "cosine_1d.yaml").read_text())
    cfg["lattice"] = [[2.0, 0.0], [0.0, 2.0]]
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_defaults_filled():
    cfg = validate_config({"dimension": 1, "lattice": [[2.0]], "potential": {"kind": "cosine"},
                           "n_electrons": 1, "e_cut": 10.0, "bz_grid": [3]})
    assert cfg["response"]["q"] == [0.0] and cfg["dynamics"]["n_cells"] == [1]


def test_hash_ignores_key_order():
    a = {"x": 1, "y": [1, 2]}
    assert config_hash(a) == config_hash({"y": [1, 2], "x": 1})
    assert config_hash(a) != config_hash({"x": 2, "y": [1, 2]})


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "rpa_crystal", "bands", "--config", str(CONFIGS / "cosine_1d.yaml"),
                           "--output", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "fermi.json").exists()
