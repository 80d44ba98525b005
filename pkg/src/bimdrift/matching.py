"""Mahalanobis plane association with geometric consistency filters."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .bim import BimModel, WallSegment
from .errors import SingularCovariance
from .geometry import Plane, plane_axes, point_polygon_distance_2d, to_plane_2d

# chi-square 95th percentile, 4 degrees of freedom
CHI2_95_4DOF = 9.488
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class MatchConfig:
    tau: float = CHI2_95_4DOF
    max_corner_gap: float = 0.5
    max_center_gap: float = 3.0
    min_area_ratio: float = 0.5

    def __post_init__(self):
        for name in ("tau", "max_corner_gap", "max_center_gap", "min_area_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MatchConfig.{name} must be > 0")


@dataclass(frozen=True)
class MatchCandidate:
    observed_plane_id: str
    wall_id: str
    mahalanobis: float
    corner_gap: float
    center_gap: float
    area_ratio: float


@dataclass(frozen=True)
class FilterResult:
    passed: bool
    corner_gap: float
    center_gap: float
    area_ratio: float


@dataclass(frozen=True)
class MatchSet:
    """One-to-one (observed plane, wall) pairs accepted for one keyframe."""

    pairs: tuple[tuple[Plane, WallSegment, MatchCandidate], ...] = ()
    keyframe_id: int = -1

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def assignments(self) -> dict[str, str]:
        return {c.observed_plane_id: c.wall_id for _, _, c in self.pairs}

    def with_planes(self, planes: dict[str, Plane]) -> "MatchSet":
        """Same associations, observed planes swapped (e.g. from frame B back to S)."""
        pairs = tuple((planes[c.observed_plane_id], w, c) for _, w, c in self.pairs)
        return replace(self, pairs=pairs)

    def subset(self, plane_ids: Iterable[str]) -> "MatchSet":
        keep = set(plane_ids)
        return replace(self, pairs=tuple(p for p in self.pairs if p[2].observed_plane_id in keep))


def mahalanobis_distance(s: Plane, b: Plane) -> float:
    """Squared Mahalanobis distance between plane features ``[n, d]``.

    The observation covariance is used alone (the wall is treated as exact).
    ``[n, d]`` and ``[-n, -d]`` describe the same plane, so the smaller of the
    two sign choices is returned; for canonical planes away from the origin
    this is the canonical value.
    """
    cov = s.covariance
    if np.linalg.cond(cov) > MAX_CONDITION:
        raise SingularCovariance("observation covariance is singular or ill-conditioned")
    info = np.linalg.inv(cov)
    fb = b.feature
    best = np.inf
    for fs in (s.feature, -s.feature):
        diff = fs - fb
        best = min(best, float(diff @ info @ diff))
    return max(best, 0.0)


def geometric_filter(s: Plane, w: WallSegment, cfg: MatchConfig) -> FilterResult:
    wp = w.plane
    axes = plane_axes(wp.normal)
    poly = to_plane_2d(wp.corners, wp.centroid, axes)
    c2 = to_plane_2d(s.centroid, wp.centroid, axes)
    center_gap = float(np.linalg.norm(c2))
    corners2 = to_plane_2d(s.corners, wp.centroid, axes)
    corner_gap = max(point_polygon_distance_2d(c, poly) for c in corners2)
    area_ratio = min(s.area, wp.area) / max(s.area, wp.area)
    passed = (center_gap <= cfg.max_center_gap
              and corner_gap <= cfg.max_corner_gap
              # partial views of a larger wall are fine
              and (area_ratio >= cfg.min_area_ratio or s.area <= wp.area))
    return FilterResult(passed, corner_gap, center_gap, area_ratio)


def candidates_for(plane_id: str, s: Plane, model: BimModel, cfg: MatchConfig) -> list[MatchCandidate]:
    out = []
    for w in model.walls:
        f = geometric_filter(s, w, cfg)
        if not f.passed:
            continue
        m = mahalanobis_distance(s, w.plane)
        if m < cfg.tau:
            out.append(MatchCandidate(plane_id, w.id, m, f.corner_gap, f.center_gap, f.area_ratio))
    return out


def match_planes(observed: Sequence[tuple[str, Plane]], model: BimModel,
                 cfg: Optional[MatchConfig] = None, keyframe_id: int = -1) -> MatchSet:
    """Greedy one-to-one association of ``(plane_id, plane)`` observations in frame B.

    Candidates pass the geometric filter and the Mahalanobis gate; pairs are
    taken in order of increasing distance, ties broken by center gap, then
    wall id, then plane id.
    """
    cfg = cfg or MatchConfig()
    planes = {}
    cands: list[MatchCandidate] = []
    for pid, s in observed:
        if pid in planes:
            raise ValueError(f"duplicate observed plane id {pid!r}")
        planes[pid] = s
        cands.extend(candidates_for(pid, s, model, cfg))
    cands.sort(key=lambda c: (c.mahalanobis, c.center_gap, c.wall_id, c.observed_plane_id))
    used_planes: set[str] = set()
    used_walls: set[str] = set()
    pairs = []
    for c in cands:
        if c.observed_plane_id in used_planes or c.wall_id in used_walls:
            continue
        used_planes.add(c.observed_plane_id)
        used_walls.add(c.wall_id)
        pairs.append((planes[c.observed_plane_id], model.wall(c.wall_id), c))
    return MatchSet(tuple(pairs), keyframe_id)
