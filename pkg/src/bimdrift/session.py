"""Online drift-correction session over a keyframe stream."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .bim import BimModel
from .errors import EmptyMatchSet, OutOfOrderKeyframe, ParseError
from .estimation import EstimationConfig, estimate_transform, initial_alignment
from .geometry import Plane, RigidTransform, canonicalize, patch_on_plane, transform_plane
from .matching import MatchConfig, MatchSet, match_planes
from .metrics import MetricsSample, evaluate_keyframe

INITIAL_MANUAL = "initial_manual"
GLOBAL = "global"
LOCAL = "local"
VARIANTS = (INITIAL_MANUAL, GLOBAL, LOCAL)

# change thresholds for "updated plane" gating
GATE_ANGLE = math.radians(0.5)
GATE_OFFSET = 0.01
GATE_AREA = 0.05


@dataclass(frozen=True)
class KeyframeObservation:
    keyframe_id: int
    timestamp: float
    camera_pose: RigidTransform  # T_SC
    planes: tuple[tuple[str, Plane], ...]  # planes in the camera frame
    known_wall_ids: Optional[dict[str, str]] = None

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        ids = [pid for pid, _ in self.planes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"keyframe {self.keyframe_id}: duplicate plane ids")

    def planes_in_slam(self) -> dict[str, Plane]:
        return {pid: transform_plane(self.camera_pose, p) for pid, p in self.planes}


@dataclass(frozen=True)
class LocalSelectionConfig:
    radius: float = 5.0
    min_planes: int = 3
    max_planes: int = 10
    radius_growth: float = 1.5

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if not self.radius_growth > 1:
            raise ValueError("radius_growth must be > 1")
        if not 0 <= self.min_planes <= self.max_planes:
            raise ValueError("need 0 <= min_planes <= max_planes")


def evaluation_match_config() -> MatchConfig:
    """Association used only for scoring: wide gate, same geometric filters.

    Scoring has to keep associating planes after the baseline has drifted far
    past the estimation gate, otherwise the worst keyframes silently drop out
    of the averages.
    """
    return MatchConfig(tau=400.0, max_corner_gap=1.0, max_center_gap=3.0, min_area_ratio=0.5)


@dataclass(frozen=True)
class SessionConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    local: LocalSelectionConfig = field(default_factory=LocalSelectionConfig)
    evaluation: MatchConfig = field(default_factory=evaluation_match_config)


@dataclass(frozen=True)
class KeyframeSummary:
    keyframe_id: int
    processed: bool
    transform: RigidTransform
    selected_count: int = 0
    matched_count: int = 0
    rank: Optional[int] = None
    final_cost: Optional[float] = None
    iterations: Optional[int] = None


@dataclass(frozen=True)
class SessionState:
    current_transform: RigidTransform = field(default_factory=RigidTransform.identity)
    plane_registry: dict = field(default_factory=dict)  # plane_id -> Plane in S
    variant: str = LOCAL
    history: tuple[KeyframeSummary, ...] = ()
    last_keyframe_id: Optional[int] = None
    aligned: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    return math.acos(min(1.0, abs(float(a @ b))))


def plane_changed(old: Plane, new: Plane) -> bool:
    if _angle(old.normal, new.normal) > GATE_ANGLE:
        return True
    # compare offsets with a consistent sign
    sign = 1.0 if float(old.normal @ new.normal) >= 0 else -1.0
    if abs(old.offset - sign * new.offset) > GATE_OFFSET:
        return True
    return abs(new.area - old.area) > GATE_AREA * old.area


def should_process(kf: KeyframeObservation, state: SessionState) -> bool:
    """True when the keyframe brings a new plane or moves a known one."""
    for pid, plane in kf.planes_in_slam().items():
        old = state.plane_registry.get(pid)
        if old is None or plane_changed(old, plane):
            return True
    return False


def select_planes(state: SessionState, camera_pose: RigidTransform,
                  cfg: Optional[LocalSelectionConfig] = None) -> list[tuple[str, Plane]]:
    """Registry planes used for re-estimation under the session's variant."""
    cfg = cfg or LocalSelectionConfig()
    if state.variant == INITIAL_MANUAL:
        return []
    items = list(state.plane_registry.items())
    if state.variant == GLOBAL:
        return items
    position = camera_pose.translation
    forward = camera_pose.rotation[:, 2]
    ahead = []
    for pid, p in items:
        rel = p.centroid - position
        if float(rel @ forward) > 0.0:
            ahead.append((float(np.linalg.norm(rel)), pid, p))
    ahead.sort(key=lambda x: (x[0], x[1]))
    radius = cfg.radius
    while True:
        chosen = [x for x in ahead if x[0] <= radius]
        if len(chosen) >= cfg.min_planes or len(chosen) == len(ahead):
            break
        radius *= cfg.radius_growth
    return [(pid, p) for _, pid, p in chosen[:cfg.max_planes]]


def _lift(planes: Iterable[tuple[str, Plane]], T: RigidTransform) -> list[tuple[str, Plane]]:
    return [(pid, transform_plane(T, p)) for pid, p in planes]


def _match_in_slam(planes_s: Sequence[tuple[str, Plane]], T: RigidTransform, model: BimModel,
                   cfg: MatchConfig, keyframe_id: int) -> MatchSet:
    """Match S-frame planes through ``T``; the returned pairs hold the S-frame planes."""
    matches = match_planes(_lift(planes_s, T), model, cfg, keyframe_id)
    return matches.with_planes(dict(planes_s))


def process_keyframe(kf: KeyframeObservation, state: SessionState, model: BimModel,
                     cfg: Optional[SessionConfig] = None) -> tuple[SessionState, MetricsSample]:
    """Advance the session by one keyframe; returns the new state and its metrics."""
    cfg = cfg or SessionConfig()
    if state.last_keyframe_id is not None and kf.keyframe_id <= state.last_keyframe_id:
        raise OutOfOrderKeyframe(
            f"keyframe {kf.keyframe_id} arrived after {state.last_keyframe_id}")
    planes_s = kf.planes_in_slam()
    process = should_process(kf, state)
    registry = dict(state.plane_registry)
    registry.update(planes_s)
    T = state.current_transform
    aligned = state.aligned
    if not aligned and kf.known_wall_ids:
        first = [(planes_s[pid], wid) for pid, wid in sorted(kf.known_wall_ids.items()) if pid in planes_s]
        T = initial_alignment(first, model, cfg.estimation)
        aligned = True
    state = replace(state, plane_registry=registry, current_transform=T, aligned=aligned,
                    last_keyframe_id=kf.keyframe_id)

    selected_count = matched_count = 0
    result = None
    if process and state.variant != INITIAL_MANUAL:
        selected = select_planes(state, kf.camera_pose, cfg.local)
        selected_count = len(selected)
        matches = _match_in_slam(selected, T, model, cfg.match, kf.keyframe_id)
        matched_count = len(matches)
        try:
            result = estimate_transform(matches, T, cfg.estimation)
        except EmptyMatchSet:
            result = None
        if result is not None:
            T = result.transform
            state = replace(state, current_transform=T)

    summary = KeyframeSummary(
        keyframe_id=kf.keyframe_id, processed=process, transform=T,
        selected_count=selected_count, matched_count=matched_count,
        rank=None if result is None else result.rank,
        final_cost=None if result is None else result.final_cost,
        iterations=None if result is None else result.iterations,
    )
    state = replace(state, history=state.history + (summary,))
    observed = sorted(planes_s.items())
    eval_matches = _match_in_slam(observed, T, model, cfg.evaluation, kf.keyframe_id)
    sample = evaluate_keyframe(eval_matches, T, variant=state.variant)
    return state, sample


class Session:
    """Stateful wrapper around :func:`process_keyframe`."""

    def __init__(self, model: BimModel, variant: str = LOCAL, cfg: Optional[SessionConfig] = None):
        self.model = model
        self.cfg = cfg or SessionConfig()
        self.state = SessionState(variant=variant)
        self.samples: list[MetricsSample] = []
        self.corrected_positions: list[np.ndarray] = []

    @property
    def transform(self) -> RigidTransform:
        return self.state.current_transform

    def process(self, kf: KeyframeObservation) -> MetricsSample:
        self.state, sample = process_keyframe(kf, self.state, self.model, self.cfg)
        self.samples.append(sample)
        self.corrected_positions.append(self.transform.apply(kf.camera_pose.translation))
        return sample

    def run(self, stream: Iterable[KeyframeObservation]) -> list[MetricsSample]:
        for kf in stream:
            self.process(kf)
        return self.samples


# --------------------------------------------------------------------------
# observation log (JSON lines)
# --------------------------------------------------------------------------

def _plane_to_dict(pid: str, p: Plane, with_covariance: bool) -> dict:
    d = {
        "plane_id": pid,
        "normal": [float(v) for v in p.normal],
        "offset": float(p.offset),
        "centroid": [float(v) for v in p.centroid],
        "corners": [[float(v) for v in c] for c in p.corners],
    }
    if with_covariance:
        d["covariance"] = [float(v) for v in p.covariance.ravel()]
    return d


def _plane_from_dict(d: dict) -> tuple[str, Plane]:
    normal = np.asarray(d["normal"], dtype=float)
    corners = np.asarray(d["corners"], dtype=float)
    if normal.shape != (3,) or corners.ndim != 2 or corners.shape[1] != 3 or len(corners) < 3:
        raise ParseError(f"plane {d.get('plane_id')!r}: malformed geometry")
    norm = float(np.linalg.norm(normal))
    if not norm > 0:
        raise ParseError(f"plane {d.get('plane_id')!r}: zero normal")
    cov = None
    if d.get("covariance") is not None:
        cov = np.asarray(d["covariance"], dtype=float).reshape(4, 4)
    plane = patch_on_plane(normal / norm, corners, cov)
    return str(d["plane_id"]), canonicalize(plane)


def keyframe_to_dict(kf: KeyframeObservation, with_covariance: bool = False) -> dict:
    d = {
        "keyframe_id": kf.keyframe_id,
        "timestamp": kf.timestamp,
        "camera_pose": kf.camera_pose.to_dict(),
        "planes": [_plane_to_dict(pid, p, with_covariance) for pid, p in kf.planes],
    }
    if kf.known_wall_ids:
        d["known_wall_ids"] = dict(sorted(kf.known_wall_ids.items()))
    return d


def keyframe_from_dict(d: dict) -> KeyframeObservation:
    try:
        return KeyframeObservation(
            keyframe_id=int(d["keyframe_id"]),
            timestamp=float(d.get("timestamp", 0.0)),
            camera_pose=RigidTransform.from_dict(d["camera_pose"]),
            planes=tuple(_plane_from_dict(p) for p in d.get("planes", [])),
            known_wall_ids=d.get("known_wall_ids"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed keyframe: {exc}") from exc


def write_log(stream: Iterable[KeyframeObservation], path, with_covariance: bool = True) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for kf in stream:
            fh.write(json.dumps(keyframe_to_dict(kf, with_covariance)) + "\n")
    os.replace(tmp, path)


def read_log(path) -> list[KeyframeObservation]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            out.append(keyframe_from_dict(d))
    return out
