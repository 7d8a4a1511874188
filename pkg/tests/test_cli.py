import json
import subprocess
import sys
from pathlib import Path

import pytest

from pathwise_lab.cli import main
from pathwise_lab.errors import InvalidArgument
from pathwise_lab.experiments import EXPERIMENTS, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_shipped_configs_validate(capsys):
    names = sorted(CONFIGS.glob("*.json"))
    assert {load_config(str(f))["experiment"] for f in names} == set(EXPERIMENTS)
    for f in names:
        assert main(["validate", str(f)]) == 0
    filled = json.loads(capsys.readouterr().out.split("\n}\n")[0] + "\n}")
    assert "partition" in filled and "seed" in filled


def test_missing_seed_is_invalid(tmp_path, capsys):
    assert main(["run", _write(tmp_path, {"experiment": "v_continuity"})]) == 2
    assert "seed" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"experiment": "nope", "seed": 1},
    {"experiment": "v_continuity", "seed": 1, "colour": "red"},
    {"experiment": "smallball", "seed": 1, "epsilons": [-1.0]},
    {"experiment": "replicate_poisson", "seed": 1,
     "class": {"type": "geometric_poisson", "x0": 100.0, "mu": 0.05, "a": 0.1, "jumps": {"type": "poisson", "rate": 1}}},
    {"experiment": "ito_residual", "seed": 1, "levels": [8, 20]},
    {"experiment": "qv_profile", "seed": 1, "class": {"type": "continuous_qv", "x0": 100.0, "sigma": -0.2}},
])
def test_invalid_configs(tmp_path, cfg):
    assert main(["validate", _write(tmp_path, cfg)]) == 2
    with pytest.raises(InvalidArgument):
        load_config(cfg)


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_run_writes_manifest_and_csv(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "v_continuity.json"), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["result"]["verdict"] == "discontinuity_witness"
    assert manifest["outputs"] == ["continuity.csv"]


def test_seed_override(tmp_path):
    cfg = _write(tmp_path, {"experiment": "arbitrage_scan", "seed": 1, "bundle_size": 4,
                            "partition": {"max_level": 6}, "levels": [6], "level": 6})
    main(["run", cfg, "--out", str(tmp_path / "a"), "--seed", "7"])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]["seed"] == 7


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"experiment": "qv_profile", "seed": 3, "bundle_size": 4,
                            "partition": {"max_level": 10}, "levels": [10]})
    for d in ("a", "b"):
        assert main(["run", cfg, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "qv_profile.csv").read_bytes()
    assert a == (tmp_path / "b" / "qv_profile.csv").read_bytes()


def test_smallball_huge_epsilon(tmp_path):
    cfg = _write(tmp_path, {"experiment": "smallball", "seed": 2, "partition": {"max_level": 6}, "levels": [6],
                            "epsilons": [1e6], "n_samples": 50})
    out = tmp_path / "sb"
    assert main(["run", cfg, "--out", str(out)]) == 0
    lines = (out / "smallball.csv").read_text().strip().splitlines()
    header, row = lines[0].split(","), lines[1].split(",")
    assert float(row[header.index("fraction")]) == 1.0


def test_precondition_exit_code(tmp_path):
    cfg = _write(tmp_path, {"experiment": "arbitrage_scan", "seed": 1, "bundle_size": 4,
                            "partition": {"max_level": 6}, "levels": [6], "level": 6,
                            "portfolio": {"kind": "constant", "units": 1.0, "V0": 5.0}})
    out = tmp_path / "pre"
    assert main(["run", cfg, "--out", str(out)]) == 3
    assert json.loads((out / "manifest.json").read_text())["status"] == "precondition_failed"


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pathwise_lab.cli", "validate", str(CONFIGS / "v_continuity.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["experiment"] == "v_continuity"
