"""Alignment error metrics and variant comparison."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import RigidTransform, angular_deviation, distance_error, transform_plane

CSV_COLUMNS = ["keyframe_id", "variant", "matched_count", "mean_angular_deg", "mean_distance_m"]


@dataclass(frozen=True)
class MetricsSample:
    keyframe_id: int
    variant: str
    mean_angular_deviation: Optional[float]  # radians
    mean_distance_error: Optional[float]  # meters
    matched_count: int = 0


def evaluate_keyframe(matches, T: RigidTransform, variant: str = "", keyframe_id: Optional[int] = None) -> MetricsSample:
    """Mean angular / distance error of matched S-frame planes lifted to B by ``T``."""
    if keyframe_id is None:
        keyframe_id = getattr(matches, "keyframe_id", -1)
    angles, dists = [], []
    for pair in matches:
        observed, wall = pair[0], pair[1]
        lifted = transform_plane(T, observed)
        angles.append(angular_deviation(lifted, wall.plane))
        dists.append(distance_error(lifted, wall.plane))
    if not angles:
        return MetricsSample(keyframe_id, variant, None, None, 0)
    return MetricsSample(keyframe_id, variant, float(np.mean(angles)), float(np.mean(dists)), len(angles))


def pooled_means(samples: Sequence[MetricsSample]) -> tuple[float, float]:
    """Average of the per-keyframe means over keyframes that had matches."""
    ang = [s.mean_angular_deviation for s in samples if s.matched_count > 0]
    dist = [s.mean_distance_error for s in samples if s.matched_count > 0]
    return (float(np.mean(ang)) if ang else 0.0, float(np.mean(dist)) if dist else 0.0)


def reduction_pct(baseline: float, value: float) -> float:
    if baseline == 0.0:
        return 0.0
    # 1 - v/b keeps a perfect variant at exactly 100
    return 100.0 * (1.0 - value / baseline)


@dataclass
class ComparisonReport:
    series: dict[str, list[MetricsSample]]
    baseline: str = "initial_manual"
    reductions: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.reductions:
            self.reductions = self._compute_reductions()

    def _compute_reductions(self) -> dict[str, dict[str, float]]:
        base_ang, base_dist = pooled_means(self.series[self.baseline])
        out = {}
        for variant, samples in self.series.items():
            if variant == self.baseline:
                continue
            ang, dist = pooled_means(samples)
            out[variant] = {"angular_pct": reduction_pct(base_ang, ang),
                            "distance_pct": reduction_pct(base_dist, dist)}
        return out

    def reduction_angular_pct(self, variant: str) -> float:
        return self.reductions[variant]["angular_pct"]

    def reduction_distance_pct(self, variant: str) -> float:
        return self.reductions[variant]["distance_pct"]

    def pooled(self, variant: str) -> tuple[float, float]:
        return pooled_means(self.series[variant])

    def to_dict(self) -> dict:
        pooled = {}
        for v in self.series:
            ang, dist = self.pooled(v)
            pooled[v] = {"mean_angular_rad": ang, "mean_distance_m": dist}
        return {
            "baseline": self.baseline,
            "variants": list(self.series),
            "pooled": pooled,
            "reductions": self.reductions,
            "series": {v: [_sample_dict(s) for s in samples] for v, samples in self.series.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonReport":
        series = {v: [MetricsSample(s["keyframe_id"], v, s["mean_angular_rad"], s["mean_distance_m"],
                                    s["matched_count"]) for s in samples]
                  for v, samples in d["series"].items()}
        return cls(series, d["baseline"], d["reductions"])


def _sample_dict(s: MetricsSample) -> dict:
    return {"keyframe_id": s.keyframe_id, "matched_count": s.matched_count,
            "mean_angular_rad": s.mean_angular_deviation, "mean_distance_m": s.mean_distance_error}


# CSV: angles in degrees; empty cells where a keyframe had no matches

def samples_to_csv(samples: Sequence[MetricsSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in samples:
        ang = "" if s.mean_angular_deviation is None else repr(math.degrees(s.mean_angular_deviation))
        dist = "" if s.mean_distance_error is None else repr(s.mean_distance_error)
        writer.writerow([s.keyframe_id, s.variant, s.matched_count, ang, dist])
    return buf.getvalue()


def samples_from_csv(text: str) -> list[MetricsSample]:
    rows = csv.DictReader(io.StringIO(text))
    out = []
    for r in rows:
        ang = math.radians(float(r["mean_angular_deg"])) if r["mean_angular_deg"] else None
        dist = float(r["mean_distance_m"]) if r["mean_distance_m"] else None
        out.append(MetricsSample(int(r["keyframe_id"]), r["variant"], ang, dist, int(r["matched_count"])))
    return out


def report_to_csv(report: ComparisonReport) -> str:
    rows = [s for samples in report.series.values() for s in samples]
    return samples_to_csv(rows)


def report_from_csv(text: str, baseline: str = "initial_manual") -> ComparisonReport:
    series: dict[str, list[MetricsSample]] = {}
    for s in samples_from_csv(text):
        series.setdefault(s.variant, []).append(s)
    return ComparisonReport(series, baseline)


def compare_variants(stream, model, variants: Sequence[str] = ("initial_manual", "global", "local"),
                     cfg=None, return_sessions: bool = False):
    """Replay one stream through a session per variant and compare against the baseline."""
    from .session import INITIAL_MANUAL, Session

    variants = list(variants)
    if INITIAL_MANUAL not in variants:
        raise ValueError("compare_variants needs the initial_manual baseline")
    if len(variants) < 2:
        raise ValueError("compare_variants needs at least two variants")
    stream = list(stream)
    sessions = {}
    for v in variants:
        s = Session(model, v, cfg)
        s.run(stream)
        sessions[v] = s
    report = ComparisonReport({v: sessions[v].samples for v in variants}, INITIAL_MANUAL)
    return (report, sessions) if return_sessions else report


def wall_penetrations(positions, reference_positions, model) -> list[float]:
    """Per-keyframe depth by which a position sits behind a wall.

    A wall counts as penetrated when ``positions[k]`` lies on the other side of
    it than ``reference_positions[k]`` (e.g. the true camera position) and its
    projection falls inside the wall polygon. The depth is the distance to the
    wall plane; 0 when nothing is penetrated.
    """
    from .geometry import plane_axes, point_in_polygon_2d, to_plane_2d

    polys = []
    for w in model.walls:
        axes = plane_axes(w.plane.normal)
        polys.append((w.plane, axes, to_plane_2d(w.plane.corners, w.plane.centroid, axes)))
    depths = []
    for p, ref in zip(positions, reference_positions):
        worst = 0.0
        for plane, axes, poly in polys:
            sp = float(plane.signed_distance(p))
            sr = float(plane.signed_distance(ref))
            if sp * sr >= 0.0:
                continue
            if point_in_polygon_2d(to_plane_2d(p, plane.centroid, axes), poly):
                worst = max(worst, abs(sp))
        depths.append(worst)
    return depths
