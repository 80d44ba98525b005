"""Command-line entry point: generate, simulate, run, compare.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Every output file is written to a temp file and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bim import load_bim, save_bim, split_walls
from .errors import BimDriftError, NonFiniteCost
from .estimation import EstimationConfig
from .matching import MatchConfig
from .metrics import compare_variants, report_to_csv, samples_to_csv
from .session import VARIANTS, LocalSelectionConfig, Session, SessionConfig, read_log, write_log

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

DEFAULT_CONFIG = {
    "seed": 7,
    "rooms": "2x2",
    "room_size": 4.0,
    "loops": 3,
    "rot_rate": 0.002,
    "trans_rate": 0.005,
    "bias_rot": 0.0,
    "bias_trans": [0.0, 0.0, 0.0],
    "sigma_normal": 0.02,
    "sigma_offset": 0.02,
    "sigma_centroid": 0.02,
    "detection_prob": 1.0,
    "keyframe_spacing": 0.25,
    "max_keyframes": 150,
    "variant": "local",
    "variants": list(VARIANTS),
    "match_tau": 9.488,
    "match_max_corner_gap": 0.5,
    "match_max_center_gap": 3.0,
    "match_min_area_ratio": 0.5,
    "eval_tau": 400.0,
    "eval_max_corner_gap": 1.0,
    "eval_max_center_gap": 3.0,
    "eval_min_area_ratio": 0.5,
    "estimation_max_iterations": 50,
    "estimation_convergence_tol": 1e-9,
    "estimation_normal_weight": 1.0,
    "estimation_svd_truncation": 1e-6,
    "estimation_point_residual_mode": "point_to_plane",
    "local_radius": 5.0,
    "local_min_planes": 3,
    "local_max_planes": 10,
    "local_radius_growth": 1.5,
}


class UsageError(Exception):
    pass


def load_config(path: Optional[str]) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            user = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(user) - set(cfg))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(user)
    return cfg


def session_config(cfg: dict) -> SessionConfig:
    return SessionConfig(
        match=MatchConfig(cfg["match_tau"], cfg["match_max_corner_gap"],
                          cfg["match_max_center_gap"], cfg["match_min_area_ratio"]),
        estimation=EstimationConfig(cfg["estimation_max_iterations"], cfg["estimation_convergence_tol"],
                                    cfg["estimation_normal_weight"], cfg["estimation_svd_truncation"],
                                    cfg["estimation_point_residual_mode"]),
        local=LocalSelectionConfig(cfg["local_radius"], cfg["local_min_planes"],
                                   cfg["local_max_planes"], cfg["local_radius_growth"]),
        evaluation=MatchConfig(cfg["eval_tau"], cfg["eval_max_corner_gap"],
                               cfg["eval_max_center_gap"], cfg["eval_min_area_ratio"]),
    )


def parse_rooms(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--rooms expects NxM, got {text!r}") from exc
    if nx < 1 or ny < 1:
        raise UsageError(f"room grid must be at least 1x1, got {text}")
    return nx, ny


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _model(path: str):
    if not os.path.exists(path):
        raise UsageError(f"floorplan not found: {path}")
    return split_walls(load_bim(path))


def _stream(path: str):
    if not os.path.exists(path):
        raise UsageError(f"observation log not found: {path}")
    return read_log(path)


# -- commands ---------------------------------------------------------------

def cmd_generate(args, cfg: dict) -> None:
    from .simulator import generate_scene, generate_waypoints

    rooms = parse_rooms(args.rooms or cfg["rooms"])
    size = args.room_size if args.room_size is not None else cfg["room_size"]
    seed = args.seed if args.seed is not None else cfg["seed"]
    try:
        model = generate_scene(rooms, size, seed)
        waypoints = generate_waypoints(rooms, size, seed, loops=cfg["loops"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_bim(model, out / "floorplan.json")
    atomic_write(out / "waypoints.json", _json({"waypoints": waypoints}))


def cmd_simulate(args, cfg: dict) -> None:
    from .simulator import DriftModel, NoiseModel, simulate

    seed = args.seed if args.seed is not None else cfg["seed"]
    if not os.path.exists(args.floorplan):
        raise UsageError(f"floorplan not found: {args.floorplan}")
    if not os.path.exists(args.waypoints):
        raise UsageError(f"waypoints not found: {args.waypoints}")
    model = load_bim(args.floorplan)
    with open(args.waypoints) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.waypoints}: {exc}") from exc
    waypoints = raw["waypoints"] if isinstance(raw, dict) else raw
    if args.drift_none:
        drift = DriftModel(seed=seed)
    else:
        drift = DriftModel(cfg["rot_rate"], cfg["trans_rate"], cfg["bias_rot"],
                           tuple(cfg["bias_trans"]), seed)
    if args.noise_none:
        noise = NoiseModel(seed=seed)
    else:
        noise = NoiseModel(cfg["sigma_normal"], cfg["sigma_offset"], cfg["sigma_centroid"],
                           cfg["detection_prob"], seed)
    stream, gt = simulate(model, waypoints, drift, noise, cfg["keyframe_spacing"], cfg["max_keyframes"])
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_log(stream, out / "log.jsonl")
    atomic_write(out / "ground_truth.json", _json(gt.to_dict()))


def cmd_run(args, cfg: dict) -> None:
    variant = args.variant or cfg["variant"]
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}")
    model = _model(args.floorplan)
    session = Session(model, variant, session_config(cfg))
    session.run(_stream(args.log))
    out = Path(args.output)
    atomic_write(out / "metrics.csv", samples_to_csv(session.samples))
    atomic_write(out / "transform.json", _json({"variant": variant, "B_T_S": session.transform.to_dict()}))


def cmd_compare(args, cfg: dict) -> None:
    variants = args.variants.split(",") if args.variants else list(cfg["variants"])
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    if "initial_manual" not in variants:
        raise UsageError("compare needs the initial_manual baseline among --variants")
    if len(variants) < 2:
        raise UsageError("compare needs at least two variants")
    model = _model(args.floorplan)
    report = compare_variants(_stream(args.log), model, variants, session_config(cfg))
    out = Path(args.output)
    atomic_write(out / "report.json", report.to_json())
    atomic_write(out / "report.csv", report_to_csv(report))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bimdrift", description="Plane-based SLAM drift correction against a floorplan.")
    p.add_argument("--config", help="flat JSON config; missing keys keep their defaults")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("generate", help="write floorplan.json and waypoints.json")
    g.add_argument("--rooms", help="grid as NxM, e.g. 2x2")
    g.add_argument("--room-size", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output", default="out")

    s = sub.add_parser("simulate", help="write log.jsonl and ground_truth.json")
    s.add_argument("--floorplan", required=True)
    s.add_argument("--waypoints", required=True)
    s.add_argument("--drift-none", action="store_true")
    s.add_argument("--noise-none", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", default="out")

    r = sub.add_parser("run", help="replay a log through one variant")
    r.add_argument("--floorplan", required=True)
    r.add_argument("--log", required=True)
    r.add_argument("--variant", choices=VARIANTS)
    r.add_argument("-o", "--output", default="out")

    c = sub.add_parser("compare", help="replay a log through several variants")
    c.add_argument("--floorplan", required=True)
    c.add_argument("--log", required=True)
    c.add_argument("--variants", help="comma separated, must include initial_manual")
    c.add_argument("-o", "--output", default="out")
    return p


COMMANDS = {"generate": cmd_generate, "simulate": cmd_simulate, "run": cmd_run, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.dump_config:
            sys.stdout.write(_json(cfg))
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_INPUT
        COMMANDS[args.command](args, cfg)
    except NonFiniteCost as exc:
        print(f"bimdrift: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, BimDriftError, ValueError, KeyError, OSError) as exc:
        print(f"bimdrift: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
