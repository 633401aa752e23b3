import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from shycoupling.cli import main
from shycoupling.config import load_config, parse_config
from shycoupling.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def disc_doc(**over):
    doc = {
        "schema_version": 1,
        "seed": 3,
        "domain": {"kind": "disc", "radius": 1.0},
        "strategy": {"name": "perverse"},
        "simulation": {"x0": [0.3, 0.0], "y0": [-0.3, 0.0], "h": 1e-3, "horizon": 0.5, "epsilon": 0.5, "record_stride": 10},
        "certificate": {"mode": "simple", "p": [2.0, 0.0], "resolution": 0.05},
        "ensemble": {"replicas": 4, "checkpoints": 4, "threads": 1},
        "output": {"dir": "out"},
    }
    doc.update(over)
    return doc


def write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_config_parses_examples():
    cfg = load_config(CONFIGS / "disc_perverse.yaml")
    assert cfg.seed == 7 and cfg.simulation.seed == 7
    assert cfg.certificate.mode == "simple" and len(cfg.ensemble.checkpoints) == 11
    cfg = load_config(CONFIGS / "square_planar.yaml")
    assert cfg.certificate.R == 100.0 and len(cfg.domain.segments) == 4


@pytest.mark.parametrize(
    "edit, key",
    [
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d.update(strategy={"name": "telepathic"}), "strategy.name"),
        (lambda d: d["simulation"].update(h=-1.0), "simulation.h"),
        (lambda d: d["simulation"].update(x0=[3.0, 0.0]), "simulation.x0"),
        (lambda d: d["simulation"].pop("epsilon"), "simulation.epsilon"),
        (lambda d: d["certificate"].update(mode="magic"), "certificate.mode"),
        (lambda d: d["certificate"].update(p=[0.5, 0.0]), "certificate.p"),
        (lambda d: d["ensemble"].update(replicas=-1), "ensemble.replicas"),
        (lambda d: d["ensemble"].update(checkpoints=[0.1, 0.05]), "ensemble.checkpoints"),
        (lambda d: d.update(extra=1), "extra"),
    ],
)
def test_config_errors_name_the_key(edit, key):
    doc = disc_doc()
    edit(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.key == key


def test_overrides():
    cfg = parse_config(disc_doc()).with_overrides(seed=99, replicas=0, out="elsewhere")
    assert cfg.seed == 99 and cfg.simulation.seed == 99 and cfg.ensemble.replicas == 0
    with pytest.raises(ConfigError):
        cfg.with_overrides(threads=0)


def test_simulate_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, disc_doc())
    assert main(["simulate", "--config", cfg]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in (out / "trajectories").iterdir()) == [f"replica_{k:05d}.csv" for k in range(4)]
    for name in ("certificate.json", "coupling_times.csv", "summary.yaml", "checkpoints.csv"):
        assert (out / name).exists()
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["replicas"] == 4 and summary["seed"] == 3
    assert (out / "checkpoints.csv").read_text().startswith("t,replicas,mean_stopped_time")
    assert main(["stats", "--input", str(out / "trajectories"), "--certificate", str(out / "certificate.json"), "--out", str(tmp_path / "st")]) == 0
    assert yaml.safe_load((tmp_path / "st" / "summary.yaml").read_text())["replicas"] == 4


def test_simulate_zero_replicas(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, disc_doc())
    assert main(["simulate", "--config", cfg, "--replicas", "0", "--out", "z"]) == 0
    assert (tmp_path / "z" / "coupling_times.csv").read_text() == "replica,coupling_time,stop_reason\n"


def test_bad_strategy_exit_2(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, disc_doc(strategy={"name": "telepathic"}))
    assert main(["simulate", "--config", cfg]) == 2
    assert "strategy.name" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert main(["verify", "--certificate", str(tmp_path / "nope.json")]) == 2
    (tmp_path / "broken.json").write_text("{}")
    assert main(["verify", "--certificate", str(tmp_path / "broken.json")]) == 2


def test_square_simple_is_infeasible(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    doc = disc_doc(domain={"kind": "square", "side": 2.0})
    doc["certificate"]["p"] = [3.0, 0.0]
    assert main(["certify", "--config", write(tmp_path, doc)]) == 3
    assert "segments" in capsys.readouterr().err


def test_certify_verify_round_trip_and_tamper(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, disc_doc())
    assert main(["certify", "--config", cfg, "--out", "c"]) == 0
    path = tmp_path / "c" / "certificate.json"
    assert yaml.safe_load((tmp_path / "c" / "verification.yaml").read_text())["passed"] is True
    assert main(["verify", "--certificate", str(path)]) == 0
    assert main(["verify", "--certificate", str(path), "--refine", "2"]) == 0
    doc = json.loads(path.read_text())
    doc["delta"] *= 5
    path.write_text(json.dumps(doc))
    assert main(["verify", "--certificate", str(path)]) == 4


def test_verify_from_config_file_mode(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["certify", "--config", write(tmp_path, disc_doc()), "--out", "c"]) == 0
    doc = disc_doc(certificate={"mode": "file", "path": "c/certificate.json"})
    assert main(["verify", "--config", write(tmp_path, doc, "f.yaml")]) == 0


def test_rerun_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, disc_doc())
    assert main(["simulate", "--config", cfg, "--out", "a"]) == 0
    assert main(["simulate", "--config", cfg, "--out", "b", "--threads", "2"]) == 0
    for f in sorted((tmp_path / "a").rglob("*.csv")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    assert main(["simulate", "--config", cfg, "--out", "c", "--seed", "4"]) == 0
    assert (tmp_path / "a" / "trajectories" / "replica_00000.csv").read_bytes() != (
        tmp_path / "c" / "trajectories" / "replica_00000.csv"
    ).read_bytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "shycoupling", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
