import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bimdrift.bim import BimModel, WallSegment
from bimdrift.errors import SingularCovariance
from bimdrift.geometry import Plane, RigidTransform, plane_from_corners, transform_plane
from bimdrift.matching import MatchConfig, geometric_filter, mahalanobis_distance, match_planes

from conftest import box_room, noisy_room_observations, rect, transforms


def _plane(normal, offset, cov, centroid=(0, 0, 0)):
    n = np.asarray(normal, dtype=float)
    c = np.asarray(centroid, dtype=float)
    return Plane(n, offset, c, np.array([c, c + [1, 0, 0], c + [0, 1, 0]]), 1.0, cov)


def test_mahalanobis_zero_for_equal_features():
    p = _plane([0, 0, 1], 2.0, np.eye(4) * 0.01)
    assert mahalanobis_distance(p, p) == 0.0


def test_mahalanobis_analytic_normal_difference():
    s = _plane([0.1, 0, 1], 0.0, np.diag([0.01] * 4))
    b = _plane([0, 0, 1], 0.0, np.eye(4))
    assert mahalanobis_distance(s, b) == pytest.approx(1.0)


def test_mahalanobis_analytic_offset_difference():
    s = _plane([0, 0, 1], 2.2, np.diag([0.0025, 0.0025, 0.0025, 0.01]))
    b = _plane([0, 0, 1], 2.0, np.eye(4))
    assert mahalanobis_distance(s, b) == pytest.approx(4.0)


def test_singular_covariance():
    s = _plane([0, 0, 1], 1.0, np.diag([1.0, 1.0, 1.0, 1e-14]))
    with pytest.raises(SingularCovariance):
        mahalanobis_distance(s, s)


@given(transforms(max_trans=0.0), st.floats(0.5, 4), st.floats(-0.3, 0.3))
def test_mahalanobis_rotation_invariant(R, d, dd):
    # rotating both planes (and the covariance) about the origin leaves the distance alone
    cov = np.diag([0.01, 0.02, 0.03, 0.04])
    cov[0, 3] = cov[3, 0] = 0.001
    n = np.array([0, 0.1, 1]) / np.linalg.norm([0, 0.1, 1])
    c = np.array([0, 0, d + dd])
    s = _plane(n, float(n @ c), cov, c)
    b = _plane([0, 0, 1], d, np.eye(4), (0, 0, d))
    before = mahalanobis_distance(s, b)
    after = mahalanobis_distance(transform_plane(R, s), transform_plane(R, b))
    assert after == pytest.approx(before, rel=1e-7)


def test_filter_identical_patch():
    w = WallSegment("w", plane_from_corners(rect(0, 0, 4, 0)))
    f = geometric_filter(w.plane, w, MatchConfig())
    assert f.passed and f.center_gap == pytest.approx(0) and f.corner_gap == 0.0 and f.area_ratio == 1.0


def test_filter_far_centre():
    w = WallSegment("w", plane_from_corners(rect(0, 0, 4, 0)))
    s = plane_from_corners(rect(12, 0, 16, 0))
    f = geometric_filter(s, w, MatchConfig(max_center_gap=1.0))
    assert not f.passed and f.center_gap == pytest.approx(12.0)


def test_filter_partial_observation():
    w = WallSegment("w", plane_from_corners(rect(0, 0, 4, 0)))
    half = plane_from_corners(rect(0, 0, 2, 0, 0, 1.5))
    f = geometric_filter(half, w, MatchConfig(min_area_ratio=0.9))
    assert f.area_ratio == pytest.approx(0.25)
    assert f.passed


def test_filter_rejects_much_larger_observation():
    w = WallSegment("w", plane_from_corners(rect(0, 0, 1, 0, 0, 1)))
    big = plane_from_corners(rect(-0.2, 0, 1.2, 0, -0.2, 3))
    assert not geometric_filter(big, w, MatchConfig()).passed


def test_single_coincident_plane_matched(room):
    s = room.wall("east").plane
    m = match_planes([("p", s)], room)
    assert m.assignments == {"p": "east"}


def test_tie_broken_by_center_gap():
    near = WallSegment("z_near", plane_from_corners(rect(0, 0, 4, 0)))
    far = WallSegment("a_far", plane_from_corners(rect(5, 0, 9, 0)))
    model = BimModel((near, far))
    obs = plane_from_corners(rect(2.5, 0, 4.5, 0))
    m = match_planes([("p", obs)], model, MatchConfig(max_corner_gap=5, max_center_gap=10))
    assert m.pairs[0][2].mahalanobis == pytest.approx(0.0)
    assert m.assignments == {"p": "z_near"}


def test_one_to_one(room):
    obs = [(f"p{i}", room.wall("east").plane) for i in range(3)]
    m = match_planes(obs, room)
    assert len(m) == 1
    assert len(set(m.assignments.values())) == len(m)


def test_matching_precision_noisy_room(room):
    # oracle: the wall each observation was generated from
    correct = total = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        obs = noisy_room_observations(room, rng)
        m = match_planes([(pid, p) for pid, _, p in obs], room, MatchConfig(tau=9.488))
        truth = {pid: wid for pid, wid, _ in obs}
        correct += sum(m.assignments.get(pid) == wid for pid, wid in truth.items())
        total += len(truth)
    assert correct / total >= 0.95


@given(st.integers(0, 10_000), st.floats(0.5, 20))
@settings(max_examples=30, deadline=None)
def test_shrinking_tau_never_adds_pairs(seed, tau):
    room = box_room()
    obs = [(pid, p) for pid, _, p in noisy_room_observations(room, np.random.default_rng(seed), 0.05)]
    wide = match_planes(obs, room, MatchConfig(tau=tau))
    narrow = match_planes(obs, room, MatchConfig(tau=tau / 2))
    assert set(narrow.assignments.items()) <= set(wide.assignments.items()) or len(narrow) <= len(wide)
    assert len(narrow) <= len(wide)


def test_matching_deterministic(room):
    obs = [(pid, p) for pid, _, p in noisy_room_observations(room, np.random.default_rng(1))]
    a = match_planes(obs, room)
    b = match_planes(list(obs), room)
    assert a.assignments == b.assignments
    assert [c.mahalanobis for _, _, c in a] == [c.mahalanobis for _, _, c in b]


def test_config_validation():
    with pytest.raises(ValueError):
        MatchConfig(tau=0)
