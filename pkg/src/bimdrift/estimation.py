"""Gauss-Newton estimation of the BIM <- SLAM transform from matched planes.

The estimated transform ``T = (R, t)`` maps SLAM-frame coordinates into the
BIM frame. For each (observed plane ``s`` in S, wall ``b`` in B) the residual
is

    point_to_plane:  [ n_b . (R c_s + t) - d_b,  sqrt(lam) (R n_s - n_b) ]
    point_to_point:  [ (R c_s + t) - c_b,        sqrt(lam) (R n_s - n_b) ]

with ``c`` the patch centroid and ``n_s`` sign-flipped so that
``(R n_s) . n_b >= 0``.

Local parameterization: ``R <- R Exp(dtheta)`` (right-multiplicative rotation
vector) and ``t <- t + dt``, so ``d(R v)/dtheta = -R [v]x``. Each step solves
``J delta = -r`` with a truncated-SVD pseudo-inverse: directions the matched
planes do not constrain get a zero update and keep their initial value.

Which directions count as constrained is decided on the structural Jacobian
(observed normals replaced by their walls' normals), not the noisy one. Two
nearly parallel noisy planes otherwise look like they pin the rotation about
their shared normal and the solver jumps along it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bim import BimModel, WallSegment
from .errors import EmptyMatchSet, NonFiniteCost, UnknownWallId
from .geometry import Plane, RigidTransform, quat_multiply, rotvec_to_quat, skew

POINT_TO_PLANE = "point_to_plane"
POINT_TO_POINT = "point_to_point"
MAX_HALVINGS = 8


@dataclass(frozen=True)
class EstimationConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-9
    normal_weight: float = 1.0
    svd_truncation: float = 1e-6
    point_residual_mode: str = POINT_TO_PLANE

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.convergence_tol > 0 and self.svd_truncation > 0 and self.normal_weight > 0):
            raise ValueError("tolerances and normal_weight must be > 0")
        if self.point_residual_mode not in (POINT_TO_PLANE, POINT_TO_POINT):
            raise ValueError(f"unknown point_residual_mode {self.point_residual_mode!r}")


@dataclass(frozen=True)
class EstimationResult:
    transform: RigidTransform
    final_cost: float
    iterations: int
    rank: int
    degenerate_directions: tuple[np.ndarray, ...] = ()
    cost_history: tuple[float, ...] = field(default=(), repr=False)
    converged: bool = True


def _pairs(matches) -> list[tuple[Plane, WallSegment]]:
    return [(p[0], p[1]) for p in matches]


def _oriented_normal(s: Plane, b: Plane, R: np.ndarray) -> np.ndarray:
    n = s.normal
    return -n if float((R @ n) @ b.normal) < 0.0 else n


def residual(pair, T: RigidTransform, cfg: Optional[EstimationConfig] = None) -> np.ndarray:
    cfg = cfg or EstimationConfig()
    s, w = pair[0], pair[1]
    b = w.plane if isinstance(w, WallSegment) else w
    R, t = T.rotation, T.translation
    c = R @ s.centroid + t
    if cfg.point_residual_mode == POINT_TO_PLANE:
        r_point = np.array([float(b.normal @ c) - b.offset])
    else:
        r_point = c - b.centroid
    n_s = _oriented_normal(s, b, R)
    r_n = math.sqrt(cfg.normal_weight) * (R @ n_s - b.normal)
    return np.concatenate([r_point, r_n])


def residual_and_jacobian(pairs, T: RigidTransform, cfg: EstimationConfig, structural: bool = False):
    """Stacked residual ``r`` and Jacobian ``J`` (columns: dtheta, dt).

    With ``structural=True`` the Jacobian is evaluated as if each observed
    normal were exactly its wall's normal, i.e. it depends only on the wall
    geometry. Its null space is what the matched walls cannot constrain.
    """
    R, t = T.rotation, T.translation
    sw = math.sqrt(cfg.normal_weight)
    rows_r, rows_j = [], []
    for s, w in _pairs(pairs):
        b = w.plane if isinstance(w, WallSegment) else w
        c = R @ s.centroid + t
        dR_c = -R @ skew(s.centroid)
        if cfg.point_residual_mode == POINT_TO_PLANE:
            rows_r.append([float(b.normal @ c) - b.offset])
            rows_j.append(np.hstack([b.normal @ dR_c, b.normal])[None, :])
        else:
            rows_r.append(c - b.centroid)
            rows_j.append(np.hstack([dR_c, np.eye(3)]))
        n_s = R.T @ b.normal if structural else _oriented_normal(s, b, R)
        rows_r.append(sw * (R @ n_s - b.normal))
        rows_j.append(np.hstack([-sw * R @ skew(n_s), np.zeros((3, 3))]))
    r = np.concatenate([np.asarray(x, dtype=float).ravel() for x in rows_r])
    J = np.vstack(rows_j)
    return r, J


def total_cost(pairs, T: RigidTransform, cfg: EstimationConfig) -> float:
    r, _ = residual_and_jacobian(pairs, T, cfg)
    return float(r @ r)


def retract(T: RigidTransform, delta: np.ndarray) -> RigidTransform:
    q = quat_multiply(T.quaternion, rotvec_to_quat(delta[:3]))
    return RigidTransform(q, T.translation + delta[3:])


def translation_constraints(J: np.ndarray, truncation: float):
    """Rank of the translation block and the unit directions it leaves free."""
    Jt = J[:, 3:]
    _, sv, vt = np.linalg.svd(Jt, full_matrices=True)
    smax = sv[0] if len(sv) else 0.0
    if smax <= 0.0:
        return 0, tuple(np.eye(3))
    rank = int(np.sum(sv > truncation * smax))
    return rank, tuple(vt[k].copy() for k in range(rank, 3))


def constrained_basis(J: np.ndarray, truncation: float) -> np.ndarray:
    """Orthonormal columns spanning the directions ``J`` constrains."""
    _, sv, vt = np.linalg.svd(J, full_matrices=False)
    if len(sv) == 0 or sv[0] == 0.0:
        return np.zeros((J.shape[1], 0))
    return vt[sv > truncation * sv[0]].T


def truncated_svd_solve(J: np.ndarray, rhs: np.ndarray, truncation: float,
                        basis: Optional[np.ndarray] = None) -> np.ndarray:
    """Minimum-norm least-squares step, restricted to ``basis`` when given.

    Singular values below ``truncation * sigma_max`` are dropped.
    """
    if basis is not None:
        if basis.shape[1] == 0:
            return np.zeros(J.shape[1])
        return basis @ truncated_svd_solve(J @ basis, rhs, truncation)
    U, sv, vt = np.linalg.svd(J, full_matrices=False)
    if len(sv) == 0 or sv[0] == 0.0:
        return np.zeros(J.shape[1])
    keep = sv > truncation * sv[0]
    coeff = (U[:, keep].T @ rhs) / sv[keep]
    return vt[keep].T @ coeff


def estimate_transform(matches, initial: Optional[RigidTransform] = None,
                       cfg: Optional[EstimationConfig] = None) -> EstimationResult:
    """Fit ``T_BS`` to matched (observed plane in S, wall) pairs.

    ``matches`` is a :class:`MatchSet` or any iterable of ``(plane, wall, ...)``
    tuples. A step that raises the cost is halved up to eight times; if no
    halving helps the solver stops at the current estimate.
    """
    cfg = cfg or EstimationConfig()
    pairs = _pairs(matches)
    if not pairs:
        raise EmptyMatchSet("no matched planes to estimate from")
    T = initial or RigidTransform.identity()
    r, J = residual_and_jacobian(pairs, T, cfg)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise NonFiniteCost("initial cost is not finite")
    history = [cost]
    iterations = 0
    converged = False
    for _ in range(cfg.max_iterations):
        _, Js = residual_and_jacobian(pairs, T, cfg, structural=True)
        delta = truncated_svd_solve(J, -r, cfg.svd_truncation,
                                    constrained_basis(Js, cfg.svd_truncation))
        _, free = translation_constraints(Js, cfg.svd_truncation)
        for u in free:
            delta[3:] -= float(delta[3:] @ u) * u
        iterations += 1
        if float(np.linalg.norm(delta)) < cfg.convergence_tol:
            converged = True
            break
        step = 1.0
        accepted = None
        saw_finite = False
        for _ in range(MAX_HALVINGS + 1):
            cand = retract(T, step * delta)
            new_cost = total_cost(pairs, cand, cfg)
            if math.isfinite(new_cost):
                saw_finite = True
                if new_cost <= cost:
                    accepted = (cand, new_cost)
                    break
            step *= 0.5
        if accepted is None:
            if not saw_finite:
                raise NonFiniteCost("cost diverged to a non-finite value")
            # no descent possible from here: numerically converged
            converged = True
            break
        T, cost = accepted
        history.append(cost)
        r, J = residual_and_jacobian(pairs, T, cfg)
    _, Js = residual_and_jacobian(pairs, T, cfg, structural=True)
    rank, free = translation_constraints(Js, cfg.svd_truncation)
    return EstimationResult(T, cost, iterations, rank, free, tuple(history), converged)


def initial_alignment(first_matches: Sequence[tuple[Plane, str]], model: BimModel,
                      cfg: Optional[EstimationConfig] = None) -> RigidTransform:
    """Manual-alignment baseline: fit from identity using user-given wall ids."""
    pairs = []
    for plane, wall_id in first_matches:
        if wall_id not in model:
            raise UnknownWallId(wall_id)
        pairs.append((plane, model.wall(wall_id)))
    if not pairs:
        raise EmptyMatchSet("initial alignment needs at least one plane/wall pair")
    return estimate_transform(pairs, RigidTransform.identity(), cfg).transform
