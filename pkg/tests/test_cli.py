import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bimdrift import cli
from bimdrift.bim import load_bim, split_walls
from bimdrift.errors import NonFiniteCost
from bimdrift.estimation import initial_alignment
from bimdrift.geometry import RigidTransform, transform_distance
from bimdrift.session import read_log


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture
def short_config(tmp_path):
    path = tmp_path / "short.json"
    path.write_text(json.dumps({"max_keyframes": 40}))
    return path


@pytest.fixture
def scene(tmp_path):
    assert run("generate", "--rooms", "2x2", "--room-size", 4, "--seed", 7, "-o", tmp_path / "scene") == 0
    return tmp_path / "scene"


def _simulate(scene, out, config, *flags):
    return run("--config", config, "simulate", "--floorplan", scene / "floorplan.json",
               "--waypoints", scene / "waypoints.json", "--seed", 7, *flags, "-o", out)


def test_generate_writes_files(scene):
    assert (scene / "floorplan.json").exists() and (scene / "waypoints.json").exists()
    assert len(load_bim(scene / "floorplan.json")) == 8


def test_generate_deterministic(tmp_path, scene):
    assert run("generate", "--rooms", "2x2", "--room-size", 4, "--seed", 7, "-o", tmp_path / "again") == 0
    for name in ("floorplan.json", "waypoints.json"):
        assert (scene / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_generate_bad_grid(tmp_path, capsys):
    assert run("generate", "--rooms", "0x1", "-o", tmp_path) == 2
    assert "1x1" in capsys.readouterr().err


def test_generate_default_output(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run("generate", "--rooms", "1x1") == 0
    assert (tmp_path / "out" / "floorplan.json").exists()


def test_simulate_clean_log_matches_truth(tmp_path, scene, short_config):
    assert _simulate(scene, tmp_path / "sim", short_config, "--drift-none", "--noise-none") == 0
    stream = read_log(tmp_path / "sim" / "log.jsonl")
    gt = json.loads((tmp_path / "sim" / "ground_truth.json").read_text())
    assert len(stream) == len(gt["keyframes"]) == 40
    for kf, frame in zip(stream, gt["keyframes"]):
        true = RigidTransform.from_dict(frame["true_pose"])
        assert max(transform_distance(kf.camera_pose, true)) < 1e-12


def test_simulate_byte_identical(tmp_path, scene, short_config):
    for d in ("a", "b"):
        assert _simulate(scene, tmp_path / d, short_config) == 0
    for name in ("log.jsonl", "ground_truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_missing_floorplan(tmp_path, scene):
    code = run("simulate", "--floorplan", tmp_path / "nope.json", "--waypoints", scene / "waypoints.json",
               "-o", tmp_path)
    assert code == 2


def test_simulate_waypoint_outside(tmp_path, scene):
    bad = tmp_path / "wp.json"
    bad.write_text(json.dumps({"waypoints": [[1, 1, 1.5], [30, 1, 1.5]]}))
    assert run("simulate", "--floorplan", scene / "floorplan.json", "--waypoints", bad, "-o", tmp_path) == 2


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_clean_log_has_zero_errors(tmp_path, scene, short_config):
    _simulate(scene, tmp_path / "sim", short_config, "--drift-none", "--noise-none")
    for variant in ("initial_manual", "global", "local"):
        out = tmp_path / variant
        assert run("run", "--floorplan", scene / "floorplan.json", "--log", tmp_path / "sim" / "log.jsonl",
                   "--variant", variant, "-o", out) == 0
        rows = _read_csv(out / "metrics.csv")
        assert len(rows) == 40
        for r in rows:
            assert float(r["mean_angular_deg"]) < 1e-9 and float(r["mean_distance_m"]) < 1e-9


def test_run_initial_manual_is_first_alignment(tmp_path, scene, short_config):
    _simulate(scene, tmp_path / "sim", short_config)
    log = tmp_path / "sim" / "log.jsonl"
    assert run("run", "--floorplan", scene / "floorplan.json", "--log", log,
               "--variant", "initial_manual", "-o", tmp_path / "r") == 0
    got = RigidTransform.from_dict(json.loads((tmp_path / "r" / "transform.json").read_text())["B_T_S"])
    model = split_walls(load_bim(scene / "floorplan.json"))
    kf0 = read_log(log)[0]
    planes = kf0.planes_in_slam()
    expected = initial_alignment([(planes[p], w) for p, w in sorted(kf0.known_wall_ids.items())], model)
    assert max(transform_distance(got, expected)) < 1e-12


def test_run_local_beats_baseline(tmp_path, scene, short_config):
    _simulate(scene, tmp_path / "sim", short_config)
    means = {}
    for variant in ("initial_manual", "local"):
        run("run", "--floorplan", scene / "floorplan.json", "--log", tmp_path / "sim" / "log.jsonl",
            "--variant", variant, "-o", tmp_path / variant)
        rows = [r for r in _read_csv(tmp_path / variant / "metrics.csv") if r["mean_distance_m"]]
        means[variant] = np.mean([float(r["mean_distance_m"]) for r in rows])
    assert means["local"] < means["initial_manual"]


def test_run_out_of_order_log(tmp_path, scene, short_config):
    _simulate(scene, tmp_path / "sim", short_config)
    lines = (tmp_path / "sim" / "log.jsonl").read_text().splitlines()
    swapped = tmp_path / "swapped.jsonl"
    swapped.write_text("\n".join([lines[0], lines[2], lines[1]]) + "\n")
    assert run("run", "--floorplan", scene / "floorplan.json", "--log", swapped, "-o", tmp_path / "r") == 2


def test_run_numerical_failure_exit_code(tmp_path, scene, short_config, monkeypatch):
    _simulate(scene, tmp_path / "sim", short_config)

    def boom(self, stream):
        raise NonFiniteCost("diverged")

    monkeypatch.setattr(cli.Session, "run", boom)
    assert run("run", "--floorplan", scene / "floorplan.json", "--log", tmp_path / "sim" / "log.jsonl",
               "-o", tmp_path / "r") == 3


def test_compare_report_and_determinism_without_ground_truth(tmp_path, scene, short_config):
    _simulate(scene, tmp_path / "sim", short_config)
    (tmp_path / "sim" / "ground_truth.json").unlink()
    for d in ("a", "b"):
        assert run("--config", short_config, "compare", "--floorplan", scene / "floorplan.json",
                   "--log", tmp_path / "sim" / "log.jsonl", "-o", tmp_path / d) == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert set(report["reductions"]) == {"global", "local"}
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare_requires_baseline(tmp_path, scene, short_config):
    _simulate(scene, tmp_path / "sim", short_config)
    assert run("compare", "--floorplan", scene / "floorplan.json", "--log", tmp_path / "sim" / "log.jsonl",
               "--variants", "local", "-o", tmp_path / "c") == 2


def test_dump_config_round_trip(tmp_path, capsys):
    assert run("--dump-config") == 0
    dumped = capsys.readouterr().out
    assert json.loads(dumped) == cli.DEFAULT_CONFIG
    path = tmp_path / "cfg.json"
    path.write_text(dumped)
    assert run("--config", path, "--dump-config") == 0
    assert capsys.readouterr().out == dumped


def test_unknown_config_key(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tau": 3}))
    assert run("--config", path, "--dump-config") == 2


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bimdrift.cli", "generate", "--rooms", "1x1", "-o", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "floorplan.json").exists()
