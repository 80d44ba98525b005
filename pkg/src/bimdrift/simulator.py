"""Synthetic floorplans, drifting camera trajectories and noisy plane detections.

Everything is seeded. Drift and detection noise come from two separate
generators (``default_rng([seed, 0])`` and ``default_rng([seed, 1])``) so either
can be switched off without changing the other.

Camera frame: x right, y down, z forward (optical axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bim import BimModel, WallSegment, split_walls
from .errors import WaypointOutsideScene
from .geometry import (
    Plane,
    RigidTransform,
    anchored_covariance,
    clip_polygon,
    compose,
    invert,
    patch_on_plane,
    plane_axes,
    plane_from_corners,
    point_in_polygon_2d,
    to_plane_2d,
)
from .session import KeyframeObservation

WALL_HEIGHT = 3.0
CAMERA_HEIGHT = 1.5
DOOR_WIDTH = 1.2
DOOR_APPROACH = 0.8

FRUSTUM_RANGE = 6.0
FRUSTUM_HALF_ANGLE = math.radians(70.0)
NEAR_CLIP = 0.1
MIN_PATCH_AREA = 0.2
YAW_LOOKAHEAD = 0.4


@dataclass(frozen=True)
class DriftModel:
    rot_rate: float = 0.0
    trans_rate: float = 0.0
    bias_rot: float = 0.0
    bias_trans: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.rot_rate < 0 or self.trans_rate < 0:
            raise ValueError("drift rates must be >= 0")


@dataclass(frozen=True)
class NoiseModel:
    sigma_normal: float = 0.0
    sigma_offset: float = 0.0
    sigma_centroid: float = 0.0
    detection_prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_normal, self.sigma_offset, self.sigma_centroid) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError("detection_prob must lie in [0, 1]")


@dataclass
class GroundTruth:
    true_poses: list[RigidTransform] = field(default_factory=list)
    true_correspondences: dict[tuple[int, str], str] = field(default_factory=dict)
    true_B_T_S: list[RigidTransform] = field(default_factory=list)
    keyframe_ids: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        frames = []
        for i, kf in enumerate(self.keyframe_ids):
            corr = {pid: wid for (k, pid), wid in self.true_correspondences.items() if k == kf}
            frames.append({
                "keyframe_id": kf,
                "true_pose": self.true_poses[i].to_dict(),
                "true_B_T_S": self.true_B_T_S[i].to_dict(),
                "correspondences": dict(sorted(corr.items())),
            })
        return {"keyframes": frames}

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        gt = cls()
        for f in data["keyframes"]:
            gt.keyframe_ids.append(int(f["keyframe_id"]))
            gt.true_poses.append(RigidTransform.from_dict(f["true_pose"]))
            gt.true_B_T_S.append(RigidTransform.from_dict(f["true_B_T_S"]))
            for pid, wid in f["correspondences"].items():
                gt.true_correspondences[(gt.keyframe_ids[-1], pid)] = wid
        return gt


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def _rect(x0, y0, x1, y1, height=WALL_HEIGHT) -> list[list[float]]:
    return [[x0, y0, 0.0], [x1, y1, 0.0], [x1, y1, height], [x0, y0, height]]


@dataclass(frozen=True)
class _Layout:
    walls: list[tuple[str, list, tuple[str, ...]]]
    # (room_a, room_b) -> (door centre xy, unit crossing direction a -> b)
    doors: dict


def _room(i: int, j: int) -> str:
    return f"r{i}_{j}"


def _layout(nx: int, ny: int, size: float, seed: int) -> _Layout:
    rng = np.random.default_rng([seed, 2])
    W, H = nx * size, ny * size
    walls = [
        ("south", _rect(0, 0, W, 0), tuple(_room(i, 0) for i in range(nx))),
        ("east", _rect(W, 0, W, H), tuple(_room(nx - 1, j) for j in range(ny))),
        ("north", _rect(W, H, 0, H), tuple(_room(i, ny - 1) for i in range(nx))),
        ("west", _rect(0, H, 0, 0), tuple(_room(0, j) for j in range(ny))),
    ]
    doors = {}
    # interior walls between horizontally adjacent rooms, door at one end
    for i in range(1, nx):
        for j in range(ny):
            y0, y1 = j * size, (j + 1) * size
            x = i * size
            if rng.random() < 0.5:
                wall, door_y = (y0, y1 - DOOR_WIDTH), y1 - DOOR_WIDTH / 2
            else:
                wall, door_y = (y0 + DOOR_WIDTH, y1), y0 + DOOR_WIDTH / 2
            walls.append((f"v{i}_{j}", _rect(x, wall[0], x, wall[1]), (_room(i - 1, j), _room(i, j))))
            doors[(_room(i - 1, j), _room(i, j))] = (np.array([x, door_y]), np.array([1.0, 0.0]))
    # interior walls between vertically adjacent rooms
    for j in range(1, ny):
        for i in range(nx):
            x0, x1 = i * size, (i + 1) * size
            y = j * size
            if rng.random() < 0.5:
                wall, door_x = (x0, x1 - DOOR_WIDTH), x1 - DOOR_WIDTH / 2
            else:
                wall, door_x = (x0 + DOOR_WIDTH, x1), x0 + DOOR_WIDTH / 2
            walls.append((f"h{i}_{j}", _rect(wall[0], y, wall[1], y), (_room(i, j - 1), _room(i, j))))
            doors[(_room(i, j - 1), _room(i, j))] = (np.array([door_x, y]), np.array([0.0, 1.0]))
    return _Layout(walls, doors)


def _check_dims(rooms, room_size):
    nx, ny = rooms
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"room grid must be at least 1x1, got {nx}x{ny}")
    if not room_size > DOOR_WIDTH + 0.5:
        raise ValueError(f"room_size must exceed {DOOR_WIDTH + 0.5} m")
    return int(nx), int(ny)


def generate_scene(rooms: tuple[int, int] = (1, 1), room_size: float = 4.0, seed: int = 0) -> BimModel:
    """Axis-aligned grid of rooms with door openings between neighbours.

    Outer walls are single faces spanning every room along their side, so a
    grid larger than 1x1 has walls for :func:`split_walls` to partition. The
    seed picks which end of each interior wall holds the door.
    """
    nx, ny = _check_dims(rooms, room_size)
    layout = _layout(nx, ny, float(room_size), seed)
    walls = tuple(WallSegment(wid, plane_from_corners(c), None, r) for wid, c, r in layout.walls)
    return BimModel(walls)


def _room_center(i, j, size):
    return np.array([(i + 0.5) * size, (j + 0.5) * size])


def _parse_room(name: str) -> tuple[int, int]:
    i, j = name[1:].split("_")
    return int(i), int(j)


def generate_waypoints(rooms: tuple[int, int] = (1, 1), room_size: float = 4.0, seed: int = 0,
                       loops: int = 3, height: float = CAMERA_HEIGHT) -> list[list[float]]:
    """Closed tour through every room, crossing doors head-on."""
    nx, ny = _check_dims(rooms, room_size)
    size = float(room_size)
    layout = _layout(nx, ny, size, seed)
    rng = np.random.default_rng([seed, 3])
    order = []
    for j in range(ny):
        cols = range(nx) if j % 2 == 0 else range(nx - 1, -1, -1)
        order.extend((i, j) for i in cols)
    if len(order) == 1:
        i, j = order[0]
        c = _room_center(i, j, size)
        r = 0.3 * size
        ring = [c + r * np.array([math.cos(a), math.sin(a)]) for a in np.linspace(0, 2 * math.pi, 9)[:-1]]
        pts = ring * loops + [ring[0]]
        return [[float(p[0]), float(p[1]), height] for p in pts]
    a, b = order[-1], order[0]
    if abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1:
        cycle = order + [order[0]]
    else:
        cycle = order + order[-2::-1]
    jitter = {room: rng.uniform(-0.15, 0.15, 2) * size for room in order}
    pts = []
    for _ in range(loops):
        for k in range(len(cycle) - 1):
            ra, rb = cycle[k], cycle[k + 1]
            pts.append(_room_center(*ra, size) + jitter[ra])
            key = (_room(*ra), _room(*rb))
            if key in layout.doors:
                centre, direction = layout.doors[key]
            else:
                centre, direction = layout.doors[(key[1], key[0])]
                direction = -direction
            pts.append(centre - DOOR_APPROACH * direction)
            pts.append(centre + DOOR_APPROACH * direction)
    last = cycle[-1]
    pts.append(_room_center(*last, size) + jitter[last])
    return [[float(p[0]), float(p[1]), height] for p in pts]


def standard_scene(seed: int = 7):
    """2x2 rooms of 4 m and the default tour through them."""
    model = generate_scene((2, 2), 4.0, seed)
    return model, generate_waypoints((2, 2), 4.0, seed)


# --------------------------------------------------------------------------
# trajectory
# --------------------------------------------------------------------------

class _Polyline:
    def __init__(self, points):
        self.pts = np.asarray(points, dtype=float)
        seg = np.diff(self.pts, axis=0)
        self.lengths = np.linalg.norm(seg, axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(self.lengths)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self.cum, s, side="right")) - 1
        k = min(max(k, 0), len(self.lengths) - 1)
        if self.lengths[k] == 0.0:
            return self.pts[k].copy()
        t = (s - self.cum[k]) / self.lengths[k]
        return self.pts[k] + t * (self.pts[k + 1] - self.pts[k])


def camera_pose(position, yaw: float) -> RigidTransform:
    """``T_BC`` for a level camera at ``position`` looking along ``yaw``."""
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[s, 0.0, c],
                  [-c, 0.0, s],
                  [0.0, -1.0, 0.0]])
    return RigidTransform.from_matrix(R, position)


def _scene_bounds(model: BimModel):
    pts = np.vstack([w.plane.corners for w in model.walls])
    return pts.min(axis=0), pts.max(axis=0)


def sample_trajectory(model: BimModel, waypoints, spacing: float,
                      max_keyframes: Optional[int] = None) -> list[RigidTransform]:
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise ValueError("need at least two [x, y, z] waypoints")
    if not spacing > 0:
        raise ValueError("keyframe spacing must be > 0")
    lo, hi = _scene_bounds(model)
    for p in pts:
        if np.any(p <= lo) or np.any(p >= hi):
            raise WaypointOutsideScene(f"waypoint {p.tolist()} is outside the floorplan")
    line = _Polyline(pts)
    n = int(math.floor(line.length / spacing + 1e-9)) + 1
    if max_keyframes is not None:
        n = min(n, int(max_keyframes))
    poses = []
    for k in range(n):
        s = k * spacing
        ahead = line.at(s + YAW_LOOKAHEAD) - line.at(s - YAW_LOOKAHEAD)
        if np.hypot(ahead[0], ahead[1]) < 1e-9:
            ahead = line.pts[-1] - line.pts[0]
        yaw = math.atan2(ahead[1], ahead[0])
        poses.append(camera_pose(line.at(s), yaw))
    return poses


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------

_TAN = math.tan(FRUSTUM_HALF_ANGLE)
_FRUSTUM = [
    (np.array([0.0, 0.0, 1.0]), NEAR_CLIP),
    (np.array([0.0, 0.0, -1.0]), -FRUSTUM_RANGE),
    (np.array([-1.0, 0.0, _TAN]), 0.0),
    (np.array([1.0, 0.0, _TAN]), 0.0),
    (np.array([0.0, -1.0, _TAN]), 0.0),
    (np.array([0.0, 1.0, _TAN]), 0.0),
]


def clip_to_frustum(corners_c: np.ndarray) -> np.ndarray:
    poly = np.asarray(corners_c, dtype=float)
    for normal, offset in _FRUSTUM:
        poly = clip_polygon(poly, normal, offset)
        if len(poly) < 3:
            return np.zeros((0, 3))
    return poly


def _occluded(origin: np.ndarray, target: np.ndarray, wall_id: str, walls) -> bool:
    d = target - origin
    for w in walls:
        if w.id == wall_id:
            continue
        p = w.plane
        denom = float(p.normal @ d)
        if abs(denom) < 1e-12:
            continue
        t = (p.offset - float(p.normal @ origin)) / denom
        if not 1e-6 < t < 1.0 - 1e-6:
            continue
        hit = origin + t * d
        axes = plane_axes(p.normal)
        if point_in_polygon_2d(to_plane_2d(hit, p.centroid, axes), to_plane_2d(p.corners, p.centroid, axes)):
            return True
    return False


def _rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    v = np.cross(a, b)
    s = float(np.linalg.norm(v))
    c = float(a @ b)
    if s < 1e-15:
        return np.eye(3)
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    angle = math.atan2(s, c)
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def perturb_patch(corners: np.ndarray, normal: np.ndarray, noise: NoiseModel,
                  rng: np.random.Generator) -> np.ndarray:
    """Rigidly jitter a planar patch: tilt, shift along and within the plane."""
    g = corners.mean(axis=0)
    dn = rng.normal(0.0, 1.0, 3) * noise.sigma_normal
    dd = rng.normal() * noise.sigma_offset
    dc = rng.normal(0.0, 1.0, 3) * noise.sigma_centroid
    new_n = normal + dn
    new_n /= np.linalg.norm(new_n)
    R = _rotation_between(normal, new_n)
    dc -= (dc @ new_n) * new_n
    return (corners - g) @ R.T + g + dd * new_n + dc


def observe(model: BimModel, pose_bc: RigidTransform, noise: NoiseModel,
            rng: np.random.Generator, plane_ids: dict[str, str]):
    """Planes (in the camera frame) of every wall visible from ``pose_bc``.

    Returns ``[(plane_id, plane, wall_id)]`` in model order.
    """
    T_cb = invert(pose_bc)
    origin = pose_bc.translation
    out = []
    for w in model.walls:
        patch_c = clip_to_frustum(T_cb.apply(w.plane.corners))
        if len(patch_c) < 3:
            continue
        n_c = T_cb.rotate(w.plane.normal)
        area = patch_on_plane(n_c, patch_c).area
        if area < MIN_PATCH_AREA:
            continue
        if _occluded(origin, pose_bc.apply(patch_c.mean(axis=0)), w.id, model.walls):
            continue
        # always draw, so detection_prob does not shift the noise stream
        detected = rng.random() < noise.detection_prob
        noisy = perturb_patch(patch_c, n_c, noise, rng)
        if not detected:
            continue
        plane = patch_on_plane(_fit_normal(noisy, n_c), noisy, anchored_covariance(noisy.mean(axis=0)))
        out.append((plane_ids[w.id], plane, w.id))
    return out


def _fit_normal(corners: np.ndarray, hint: np.ndarray) -> np.ndarray:
    rel = corners - corners.mean(axis=0)
    n = np.linalg.svd(rel)[2][2]
    return n if float(n @ hint) >= 0 else -n


def drift_increment(drift: DriftModel, rng: np.random.Generator) -> RigidTransform:
    """Per-keyframe pose error in the camera frame (camera up is -y)."""
    rot = rng.normal(0.0, 1.0, 3) * drift.rot_rate
    trans = rng.normal(0.0, 1.0, 3) * drift.trans_rate
    rot = rot + np.array([0.0, -drift.bias_rot, 0.0])
    trans = trans + np.asarray(drift.bias_trans, dtype=float)
    return RigidTransform.from_rotvec(rot, trans)


def plane_id_map(model: BimModel) -> dict[str, str]:
    return {w.id: f"p{k:03d}" for k, w in enumerate(model.walls)}


def simulate(model: BimModel, waypoints: Sequence[Sequence[float]], drift: DriftModel,
             noise: NoiseModel, keyframe_spacing: float = 0.25,
             max_keyframes: Optional[int] = None, frame_interval: float = 0.5):
    """Generate a keyframe stream and its ground truth.

    Walls are split first so each observed plane corresponds to one wall
    segment. Reported poses follow
    ``S_k = S_{k-1} (T_{k-1}^-1 T_k) D_k`` with ``D_k`` the drift increment,
    starting from ``S_0 = T_0 D_0``.
    """
    model = split_walls(model)
    true_poses = sample_trajectory(model, waypoints, keyframe_spacing, max_keyframes)
    rng_drift = np.random.default_rng([drift.seed, 0])
    rng_noise = np.random.default_rng([noise.seed, 1])
    ids = plane_id_map(model)
    stream: list[KeyframeObservation] = []
    gt = GroundTruth()
    reported = None
    for k, true_pose in enumerate(true_poses):
        inc = drift_increment(drift, rng_drift)
        if reported is None:
            reported = compose(true_pose, inc)
        else:
            rel = compose(invert(true_poses[k - 1]), true_pose)
            reported = compose(compose(reported, rel), inc)
        seen = observe(model, true_pose, noise, rng_noise, ids)
        known = {pid: wid for pid, _, wid in seen} if k == 0 else None
        stream.append(KeyframeObservation(
            keyframe_id=k,
            timestamp=k * frame_interval,
            camera_pose=reported,
            planes=tuple((pid, plane) for pid, plane, _ in seen),
            known_wall_ids=known,
        ))
        gt.keyframe_ids.append(k)
        gt.true_poses.append(true_pose)
        gt.true_B_T_S.append(compose(true_pose, invert(reported)))
        for pid, _, wid in seen:
            gt.true_correspondences[(k, pid)] = wid
    return stream, gt


def standard_fixture(rot_rate: float = 0.002, trans_rate: float = 0.005, sigma: float = 0.02,
                     seed: int = 7, keyframes: int = 150, spacing: float = 0.25):
    """Drift benchmark: 2x2 rooms, ``keyframes`` keyframes, isotropic noise ``sigma``."""
    model, waypoints = standard_scene(seed)
    stream, gt = simulate(model, waypoints,
                          DriftModel(rot_rate=rot_rate, trans_rate=trans_rate, seed=seed),
                          NoiseModel(sigma, sigma, sigma, 1.0, seed),
                          keyframe_spacing=spacing, max_keyframes=keyframes)
    return model, stream, gt
