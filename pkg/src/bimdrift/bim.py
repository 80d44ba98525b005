"""As-planned wall geometry: floorplan loading, wall splitting, plane poses."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GeometryError, ParseError, ValidationError
from .geometry import (
    COPLANAR_TOL,
    Plane,
    RigidTransform,
    clip_polygon,
    patch_on_plane,
    plane_axes,
    plane_from_corners,
    segment_polygon_distance_2d,
    to_plane_2d,
)

# perpendicular-ish: normals at least 45 degrees apart
SPLIT_MAX_COS = math.cos(math.radians(45.0))
# largest gap between a cutting wall and the cut line (covers door openings)
SPLIT_MAX_GAP = 1.5


@dataclass(frozen=True)
class WallSegment:
    id: str
    plane: Plane
    parent_id: Optional[str] = None
    room_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class BimModel:
    walls: tuple[WallSegment, ...]
    frame: str = "B"
    units: str = "meters"
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        if not self.walls:
            raise ValidationError("BIM model has no walls")
        index = {}
        for w in self.walls:
            if w.id in index:
                raise ValidationError(f"duplicate wall id {w.id!r}")
            index[w.id] = w
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.walls)

    def __contains__(self, wall_id: str) -> bool:
        return wall_id in self._index

    def wall(self, wall_id: str) -> WallSegment:
        return self._index[wall_id]

    @property
    def ids(self) -> list[str]:
        return [w.id for w in self.walls]

    def total_area(self) -> float:
        return sum(w.plane.area for w in self.walls)


# --------------------------------------------------------------------------
# floorplan JSON
# --------------------------------------------------------------------------

def parse_bim(data) -> BimModel:
    if not isinstance(data, dict) or not isinstance(data.get("walls"), list):
        raise ParseError("floorplan must be an object with a 'walls' list")
    units = data.get("units", "meters")
    if units != "meters":
        raise ValidationError(f"unsupported units {units!r}")
    walls = []
    for i, raw in enumerate(data["walls"]):
        try:
            wall_id = raw["id"]
            corners = np.asarray(raw["corners"], dtype=float)
            rooms = tuple(str(r) for r in raw.get("rooms", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"wall #{i}: {exc}") from exc
        if not isinstance(wall_id, str) or not wall_id:
            raise ParseError(f"wall #{i}: id must be a non-empty string")
        if corners.shape != (4, 3):
            raise ValidationError(f"wall {wall_id!r}: expected 4 corners of [x, y, z]")
        try:
            plane = plane_from_corners(corners)
        except GeometryError as exc:
            raise ValidationError(f"wall {wall_id!r}: {exc}") from exc
        walls.append(WallSegment(wall_id, plane, raw.get("parent_id"), rooms))
    return BimModel(tuple(walls))


def load_bim(path) -> BimModel:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_bim(data)


def bim_to_dict(model: BimModel) -> dict:
    walls = []
    for w in model.walls:
        entry = {"id": w.id, "corners": [[float(v) for v in c] for c in w.plane.corners],
                 "rooms": list(w.room_ids)}
        if w.parent_id is not None:
            entry["parent_id"] = w.parent_id
        walls.append(entry)
    return {"units": model.units, "walls": walls}


def save_bim(model: BimModel, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(bim_to_dict(model), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# wall splitting
# --------------------------------------------------------------------------

def _cut_segment(poly: np.ndarray, normal: np.ndarray, offset: float):
    """End points where the plane ``normal . x = offset`` crosses a convex polygon."""
    d = poly @ normal - offset
    pts = []
    n = len(poly)
    for i in range(n):
        a, b = d[i], d[(i + 1) % n]
        if (a > 0) != (b > 0) and a != b:
            t = a / (a - b)
            pts.append(poly[i] + t * (poly[(i + 1) % n] - poly[i]))
    if len(pts) < 2:
        return None
    return pts[0], pts[-1]


def _cuts_interior(poly: np.ndarray, normal: np.ndarray, offset: float) -> bool:
    d = poly @ normal - offset
    return bool(d.max() > COPLANAR_TOL and d.min() < -COPLANAR_TOL)


def _cutting_planes(wall: WallSegment, model: BimModel, max_gap: float):
    a = wall.plane
    cuts: list[tuple[np.ndarray, float]] = []
    for other in model.walls:
        if other.id == wall.id:
            continue
        b = other.plane
        if abs(float(a.normal @ b.normal)) > SPLIT_MAX_COS:
            continue
        if not _cuts_interior(a.corners, b.normal, b.offset):
            continue
        seg = _cut_segment(a.corners, b.normal, b.offset)
        if seg is None:
            continue
        axes = plane_axes(b.normal)
        p0, p1 = to_plane_2d(np.array(seg), b.centroid, axes)
        poly = to_plane_2d(b.corners, b.centroid, axes)
        if segment_polygon_distance_2d(p0, p1, poly) > max_gap:
            continue
        if any(abs(float(n @ b.normal)) > 1 - 1e-9 and abs(d - b.offset) < COPLANAR_TOL for n, d in cuts):
            continue
        cuts.append((b.normal, b.offset))
    return cuts


def split_walls(model: BimModel, max_gap: float = SPLIT_MAX_GAP) -> BimModel:
    """Partition walls crossed by the plane of a perpendicular-ish neighbour.

    A cut happens only when the neighbour's plane passes through the wall's
    interior (touching at an edge does not count) and the neighbour itself
    reaches within ``max_gap`` of the cut line, so door openings next to a
    junction still split the wall. Pieces are named ``{id}#k`` with ``k``
    increasing along the first cut's normal.
    """
    out: list[WallSegment] = []
    for wall in model.walls:
        cuts = _cutting_planes(wall, model, max_gap)
        if not cuts:
            out.append(wall)
            continue
        pieces = [wall.plane.corners]
        for normal, offset in cuts:
            nxt = []
            for poly in pieces:
                if _cuts_interior(poly, normal, offset):
                    nxt.append(clip_polygon(poly, normal, offset))
                    nxt.append(clip_polygon(poly, -normal, -offset))
                else:
                    nxt.append(poly)
            pieces = nxt
        axis = cuts[0][0]
        pieces.sort(key=lambda p: (float(p.mean(axis=0) @ axis), *p.mean(axis=0)))
        for k, poly in enumerate(pieces):
            plane = patch_on_plane(wall.plane.normal, poly, wall.plane.covariance)
            out.append(WallSegment(f"{wall.id}#{k}", plane, wall.id, wall.room_ids))
    return BimModel(tuple(out), model.frame, model.units)


def bim_plane_pose(w: WallSegment) -> RigidTransform:
    """Frame attached to a wall: origin at the centroid, z along the normal."""
    axes = plane_axes(w.plane.normal)
    return RigidTransform.from_matrix(axes.T, w.plane.centroid)
