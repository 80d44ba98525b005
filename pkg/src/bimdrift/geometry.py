"""Rigid transforms and bounded planes.

Conventions
-----------
* A transform ``T_ab`` maps coordinates expressed in frame ``b`` into frame
  ``a``: ``p_a = R_ab @ p_b + t_ab``. ``compose(T_ab, T_bc) == T_ac``.
* Rotations are stored as unit quaternions ``[x, y, z, w]`` with ``w >= 0``
  and renormalized after every composition.
* Planes use Hessian normal form ``normal . x = offset`` with a canonical
  sign: ``offset >= 0``, and for planes through the origin the normal is
  lexicographically positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CollinearInput, NonCoplanarInput

COPLANAR_TOL = 1e-6
OFFSET_TIE_TOL = 1e-12
DEFAULT_SIGMA_NORMAL = 0.05
DEFAULT_SIGMA_OFFSET = 0.05


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# rotation helpers
# --------------------------------------------------------------------------

def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("quaternion must be finite and non-zero")
    q = q / n
    if q[3] < 0.0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return quat_normalize(q)


def rotvec_to_quat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = math.sqrt(float(v @ v))
    if theta < 1e-8:
        # second-order series of sin(theta/2)/theta and cos(theta/2)
        k = 0.5 - theta * theta / 48.0
        return quat_normalize([v[0] * k, v[1] * k, v[2] * k, 1.0 - theta * theta / 8.0])
    k = math.sin(theta / 2.0) / theta
    return quat_normalize([v[0] * k, v[1] * k, v[2] * k, math.cos(theta / 2.0)])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    s = math.sqrt(float(q[:3] @ q[:3]))
    if s < 1e-12:
        return 2.0 * q[:3]
    angle = 2.0 * math.atan2(s, q[3])
    return q[:3] * (angle / s)


# --------------------------------------------------------------------------
# rigid transform
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3); see module docstring for the frame convention."""

    quaternion: np.ndarray = field(default_factory=lambda: _frozen([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: _frozen([0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "quaternion", _frozen(quat_normalize(self.quaternion)))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "_R", _frozen(quat_to_matrix(self.quaternion)))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotvec_to_quat(rotvec), t)

    @classmethod
    def from_homogeneous(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls.from_matrix(M[:3, :3], M[:3, 3])

    @property
    def rotation(self) -> np.ndarray:
        return self._R

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.quaternion)

    def as_homogeneous(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self._R
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        """Map a point (3,) or points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self._R.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self._R.T

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.quaternion)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=[{q}], t=[{t}])"

    def to_dict(self) -> dict:
        return {"translation": [float(v) for v in self.translation],
                "quaternion": [float(v) for v in self.quaternion]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(d["quaternion"], d["translation"])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    q = quat_multiply(a.quaternion, b.quaternion)
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(q, t)


def invert(a: RigidTransform) -> RigidTransform:
    x, y, z, w = a.quaternion
    q = np.array([-x, -y, -z, w])
    t = -(a.rotation.T @ a.translation)
    return RigidTransform(q, t)


def rotation_angle(T: RigidTransform) -> float:
    """Rotation magnitude of ``T`` in radians."""
    s = math.sqrt(float(T.quaternion[:3] @ T.quaternion[:3]))
    return 2.0 * math.atan2(s, abs(float(T.quaternion[3])))


def transform_distance(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(angle, translation) magnitudes of ``invert(a) @ b``."""
    d = compose(invert(a), b)
    return rotation_angle(d), float(np.linalg.norm(d.translation))


def rot_x(angle: float) -> RigidTransform:
    return RigidTransform.from_rotvec([angle, 0.0, 0.0])


def rot_y(angle: float) -> RigidTransform:
    return RigidTransform.from_rotvec([0.0, angle, 0.0])


def rot_z(angle: float) -> RigidTransform:
    return RigidTransform.from_rotvec([0.0, 0.0, angle])


# --------------------------------------------------------------------------
# planes
# --------------------------------------------------------------------------

def default_covariance(sigma_normal: float = DEFAULT_SIGMA_NORMAL,
                       sigma_offset: float = DEFAULT_SIGMA_OFFSET) -> np.ndarray:
    return np.diag([sigma_normal ** 2] * 3 + [sigma_offset ** 2])


def _lexicographically_positive(n: np.ndarray) -> bool:
    for c in n:
        if abs(c) > OFFSET_TIE_TOL:
            return c > 0
    return True


@dataclass(frozen=True, eq=False)
class Plane:
    """Bounded planar patch ``normal . x = offset``.

    ``covariance`` is over the feature vector ``[n_x, n_y, n_z, offset]``.
    Construct through :func:`plane_from_corners` unless every field is
    already known to be consistent.
    """

    normal: np.ndarray
    offset: float
    centroid: np.ndarray
    corners: np.ndarray
    area: float
    covariance: np.ndarray = field(default_factory=default_covariance)

    def __post_init__(self):
        object.__setattr__(self, "normal", _frozen(np.asarray(self.normal, dtype=float).reshape(3)))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "centroid", _frozen(np.asarray(self.centroid, dtype=float).reshape(3)))
        object.__setattr__(self, "corners", _frozen(np.asarray(self.corners, dtype=float).reshape(-1, 3)))
        object.__setattr__(self, "area", float(self.area))
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (4, 4):
            raise ValueError("plane covariance must be 4x4")
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def feature(self) -> np.ndarray:
        return np.append(self.normal, self.offset)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def flipped(self) -> "Plane":
        """Same plane with the opposite stored sign (not canonical)."""
        return Plane(-self.normal, -self.offset, self.centroid, self.corners, self.area, self.covariance)

    def with_covariance(self, covariance) -> "Plane":
        return Plane(self.normal, self.offset, self.centroid, self.corners, self.area, covariance)

    def is_canonical(self) -> bool:
        if self.offset > OFFSET_TIE_TOL:
            return True
        if self.offset < -OFFSET_TIE_TOL:
            return False
        return _lexicographically_positive(self.normal)

    def fields_equal(self, other: "Plane") -> bool:
        """Bitwise equality of every stored field."""
        return (np.array_equal(self.normal, other.normal)
                and self.offset == other.offset
                and np.array_equal(self.centroid, other.centroid)
                and np.array_equal(self.corners, other.corners)
                and self.area == other.area
                and np.array_equal(self.covariance, other.covariance))


def anchored_covariance(centroid, sigma_normal: float = DEFAULT_SIGMA_NORMAL,
                        sigma_offset: float = DEFAULT_SIGMA_OFFSET) -> np.ndarray:
    """Feature covariance of a patch whose uncertainty is isotropic at ``centroid``.

    Tilting a patch about its own centroid moves the offset measured from a
    distant origin, hence the normal/offset correlation.
    """
    return propagate_feature_covariance(default_covariance(sigma_normal, sigma_offset),
                                        np.eye(3), np.asarray(centroid, dtype=float))


def canonicalize(p: Plane) -> Plane:
    if p.is_canonical():
        return p
    # flipping the feature sign leaves the covariance unchanged
    return Plane(-p.normal, -p.offset, p.centroid, p.corners, p.area, p.covariance)


def polygon_area(corners: np.ndarray, normal: np.ndarray) -> float:
    """Area of a simple planar polygon by triangulation from the corner mean."""
    g = corners.mean(axis=0)
    rel = corners - g
    total = np.cross(rel, np.roll(rel, -1, axis=0)).sum(axis=0)
    return abs(float(total @ normal)) / 2.0


def plane_from_corners(corners, covariance=None, tol: float = COPLANAR_TOL) -> Plane:
    pts = np.asarray(corners, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise CollinearInput("need at least three 3-D corners")
    if not np.all(np.isfinite(pts)):
        raise NonCoplanarInput("corners must be finite")
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    _, s, vt = np.linalg.svd(rel)
    scale = max(float(np.max(np.linalg.norm(rel, axis=1))), 1e-300)
    if s[1] <= 1e-9 * scale * math.sqrt(len(pts)):
        raise CollinearInput("corners are collinear")
    normal = vt[2]
    deviation = float(np.max(np.abs(rel @ normal)))
    if deviation > tol:
        raise NonCoplanarInput(f"corners deviate {deviation:.3g} m from their plane")
    area = polygon_area(pts, normal)
    if area <= 0.0:
        raise CollinearInput("polygon has zero area")
    cov = default_covariance() if covariance is None else np.asarray(covariance, dtype=float)
    offset = float(normal @ centroid)
    return canonicalize(Plane(normal, offset, centroid, pts, area, cov))


def patch_on_plane(normal, corners, covariance=None) -> Plane:
    """Canonical plane through ``corners`` with a given (trusted) normal.

    Used where the normal is known exactly and refitting it would only add
    rounding noise, e.g. for pieces of a split wall.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    pts = np.asarray(corners, dtype=float)
    centroid = pts.mean(axis=0)
    cov = default_covariance() if covariance is None else covariance
    return canonicalize(Plane(n, float(n @ centroid), centroid, pts, polygon_area(pts, n), cov))


def feature_map(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Linear map of ``[n, d]`` under ``x -> R x + t``: ``[R n, d + n . R^T t]``."""
    A = np.zeros((4, 4))
    A[:3, :3] = R
    A[3, :3] = R.T @ t
    A[3, 3] = 1.0
    return A


def propagate_feature_covariance(cov, R, t) -> np.ndarray:
    A = feature_map(R, t)
    out = A @ np.asarray(cov, dtype=float) @ A.T
    return (out + out.T) / 2.0


def transform_plane(T: RigidTransform, p: Plane) -> Plane:
    R = T.rotation
    normal = R @ p.normal
    centroid = R @ p.centroid + T.translation
    corners = p.corners @ R.T + T.translation
    cov = propagate_feature_covariance(p.covariance, R, T.translation)
    offset = float(normal @ centroid)
    return canonicalize(Plane(normal, offset, centroid, corners, p.area, cov))


def angular_deviation(p: Plane, q: Plane) -> float:
    """Unsigned angle between the normals, in [0, pi/2]."""
    # atan2 form: acos loses ~1e-8 rad of resolution next to 0
    c = abs(float(p.normal @ q.normal))
    s = float(np.linalg.norm(np.cross(p.normal, q.normal)))
    return math.atan2(s, c)


def distance_error(observed: Plane, reference: Plane) -> float:
    return abs(float(reference.normal @ observed.centroid) - reference.offset)


# --------------------------------------------------------------------------
# in-plane polygon helpers
# --------------------------------------------------------------------------

WORLD_UP = np.array([0.0, 0.0, 1.0])
WORLD_X = np.array([1.0, 0.0, 0.0])


def plane_axes(normal) -> np.ndarray:
    """Right-handed frame ``[x, y, z]`` (rows) with ``z`` along ``normal``.

    ``x`` is world-up projected onto the plane; world-x is used when the plane
    is (near) horizontal.
    """
    n = np.asarray(normal, dtype=float)
    ref = WORLD_X if abs(float(n @ WORLD_UP)) > 1.0 - 1e-6 else WORLD_UP
    x = ref - (ref @ n) * n
    x = x / np.linalg.norm(x)
    y = np.cross(n, x)
    return np.array([x, y, n])


def to_plane_2d(points, origin, axes) -> np.ndarray:
    rel = np.asarray(points, dtype=float) - origin
    return rel @ axes[:2].T


def point_in_polygon_2d(pt, poly: np.ndarray, tol: float = 1e-9) -> bool:
    """Even-odd test; points on the boundary (within ``tol``) count as inside."""
    if point_polygon_boundary_distance_2d(pt, poly) <= tol:
        return True
    x, y = float(pt[0]), float(pt[1])
    a = np.asarray(poly, dtype=float)
    b = np.roll(a, -1, axis=0)
    crosses = (a[:, 1] > y) != (b[:, 1] > y)
    if not crosses.any():
        return False
    a, b = a[crosses], b[crosses]
    xc = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    return bool(np.count_nonzero(xc > x) % 2)


def point_segment_distance_2d(pt, a, b) -> float:
    pt, a, b = (np.asarray(v, dtype=float) for v in (pt, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(max(float((pt - a) @ ab) / denom, 0.0), 1.0)
    return float(np.linalg.norm(pt - (a + t * ab)))


def point_polygon_boundary_distance_2d(pt, poly: np.ndarray) -> float:
    pt = np.asarray(pt, dtype=float)
    a = np.asarray(poly, dtype=float)
    ab = np.roll(a, -1, axis=0) - a
    denom = np.einsum("ij,ij->i", ab, ab)
    proj = np.einsum("ij,ij->i", pt - a, ab)
    t = np.clip(np.divide(proj, denom, out=np.zeros_like(proj), where=denom > 0.0), 0.0, 1.0)
    d = pt - (a + t[:, None] * ab)
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d))))


def point_polygon_distance_2d(pt, poly: np.ndarray) -> float:
    """0 inside the polygon, otherwise distance to its boundary."""
    if point_in_polygon_2d(pt, poly):
        return 0.0
    return point_polygon_boundary_distance_2d(pt, poly)


def _segments_intersect_2d(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 <= 0) and (o3 * o4 <= 0)


def segment_polygon_distance_2d(a, b, poly: np.ndarray) -> float:
    if point_in_polygon_2d(a, poly) or point_in_polygon_2d(b, poly):
        return 0.0
    n = len(poly)
    best = math.inf
    for i in range(n):
        c, d = poly[i], poly[(i + 1) % n]
        if _segments_intersect_2d(a, b, c, d):
            return 0.0
        best = min(best,
                   point_segment_distance_2d(a, c, d), point_segment_distance_2d(b, c, d),
                   point_segment_distance_2d(c, a, b), point_segment_distance_2d(d, a, b))
    return best


def clip_polygon(corners: np.ndarray, normal, offset: float) -> np.ndarray:
    """Keep the part of a convex polygon with ``normal . x >= offset``."""
    normal = np.asarray(normal, dtype=float)
    pts = np.asarray(corners, dtype=float)
    if len(pts) == 0:
        return pts.reshape(0, 3)
    dist = pts @ normal - offset
    out: list[np.ndarray] = []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        dp, dq = dist[i], dist[(i + 1) % n]
        if dp >= 0:
            out.append(p)
        if (dp >= 0) != (dq >= 0):
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    if not out:
        return np.zeros((0, 3))
    res = np.array(out)
    # drop consecutive duplicates produced by vertices lying on the clip plane
    keep = [0]
    for i in range(1, len(res)):
        if np.linalg.norm(res[i] - res[keep[-1]]) > 1e-12:
            keep.append(i)
    if len(keep) > 1 and np.linalg.norm(res[keep[-1]] - res[keep[0]]) <= 1e-12:
        keep.pop()
    return res[keep]
