import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from cephalo.core import LandmarkSet
from cephalo.errors import ConfigError, DataError
from cephalo.fusion import PredictionBundle, drop_order, fuse_bundle, fuse_landmark, softmax


def _softmax_oracle(v):
    # direct e^x / sum e^x, fine for small inputs
    e = [np.exp(x) for x in v]
    return [x / sum(e) for x in e]


def test_softmax_examples():
    assert list(softmax([0, 0])) == [0.5, 0.5]
    out = softmax([1000, 0])
    assert out[0] == pytest.approx(1.0) and out[1] < 1e-300
    np.testing.assert_allclose(softmax([1, 2, 3]), [0.09003, 0.24473, 0.66524], atol=5e-6)
    np.testing.assert_allclose(softmax([1, 2, 3]), _softmax_oracle([1, 2, 3]), rtol=1e-14)


def test_softmax_rejects_non_finite():
    with pytest.raises(DataError):
        softmax([1.0, np.inf])
    with pytest.raises(DataError):
        softmax([])


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=10))
def test_softmax_properties(v):
    s = softmax(v)
    assert np.all(s >= 0) and s.sum() == pytest.approx(1.0)
    # order preserving wherever outputs are distinguishable
    for i in range(len(v)):
        for j in range(len(v)):
            if v[i] < v[j]:
                assert s[i] <= s[j]


def test_fuse_landmark_examples():
    p, _ = fuse_landmark([(0, 0), (10, 0), (20, 0)], [0.1, 0.2, 0.7])
    assert tuple(p) == (15.0, 0.0)
    p, c = fuse_landmark([(0, 0), (3, 0), (6, 0)], [0.5, 0.5, 0.5])
    assert tuple(p) == (4.5, 0.0)
    assert c == pytest.approx(1 / 3)


@given(
    st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)),
    st.lists(st.floats(0, 1), min_size=2, max_size=8),
)
def test_identical_points_fuse_to_themselves(p, conf):
    out, _ = fuse_landmark([p] * len(conf), conf)
    assert tuple(out) == p


def test_fuse_landmark_validation():
    with pytest.raises(DataError):
        fuse_landmark([(0, 0)], [1.0])
    with pytest.raises(ConfigError):
        fuse_landmark([(0, 0), (1, 1)], [1.0, 2.0], drop=2)


def test_drop_order_ties_take_earliest():
    assert list(drop_order([0.3, 0.1, 0.1, 0.5], 1)) == [1]
    assert list(drop_order([0.2, 0.2, 0.2], 2)) == [0, 1]


def _bundle(points, conf, vis=None):
    points = np.asarray(points, float)
    n, k = points.shape[:2]
    vis = np.ones((n, k), bool) if vis is None else vis
    return PredictionBundle(tuple(f"m{i}" for i in range(n)), points, conf, vis)


def test_fuse_bundle_identical_members():
    ls = LandmarkSet(np.random.default_rng(0).uniform(0, 500, (38, 2)))
    out = fuse_bundle(PredictionBundle.from_sets([f"m{i}" for i in range(7)], [ls] * 7))
    assert out == ls.replace(confidence=out.confidence)
    np.testing.assert_allclose(out.confidence, 1 / 7)


def test_fuse_bundle_invisible_member_dropped_first():
    pts = np.array([[[0.0, 0.0]], [[10.0, 0.0]], [[100.0, 0.0]]])
    conf = np.array([[0.1], [0.2], [0.9]])
    vis = np.array([[True], [True], [False]])
    out = fuse_bundle(_bundle(pts, conf, vis))
    assert tuple(out.points[0]) == (5.0, 0.0)
    assert out.confidence[0] == pytest.approx(0.5)


def test_fuse_bundle_mostly_invisible_landmark():
    pts = np.zeros((3, 1, 2))
    vis = np.array([[True], [False], [False]])
    out = fuse_bundle(_bundle(pts, np.ones((3, 1)), vis))
    assert not out.visible[0]


def test_bundle_validation():
    with pytest.raises(DataError):
        PredictionBundle(("a",), np.zeros((1, 2, 2)), np.ones((1, 2)), np.ones((1, 2), bool))
    with pytest.raises(DataError):
        PredictionBundle(("a", "a"), np.zeros((2, 2, 2)), np.ones((2, 2)), np.ones((2, 2), bool))
    with pytest.raises(DataError):
        PredictionBundle.from_sets(["a", "b"], [LandmarkSet(np.zeros((2, 2))), LandmarkSet(np.zeros((3, 2)))])


@st.composite
def bundles(draw):
    n = draw(st.integers(3, 7))
    k = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    return r.uniform(-100, 100, size=(n, k, 2)), r.random((n, k))


def _in_hull(p, pts, tol=1e-9):
    eq = ConvexHull(pts).equations
    return np.all(eq[:, :2] @ p + eq[:, 2] <= tol)


@given(bundles())
def test_fused_point_in_convex_hull(b):
    pts, conf = b
    out = fuse_bundle(_bundle(pts, conf))
    for j in range(pts.shape[1]):
        assert _in_hull(out.points[j], pts[:, j])


@given(bundles(), st.floats(-50, 50))
def test_confidence_shift_invariance(b, c):
    pts, conf = b
    a = fuse_bundle(_bundle(pts, conf))
    s = fuse_bundle(_bundle(pts, conf + c))
    assert np.array_equal(a.points, s.points)
    np.testing.assert_allclose(a.confidence, s.confidence, rtol=1e-9)


@given(bundles(), st.integers(0, 2**32 - 1))
def test_permutation_invariance_with_distinct_confidences(b, seed):
    pts, conf = b
    perm = np.random.default_rng(seed).permutation(pts.shape[0])
    a = fuse_bundle(_bundle(pts, conf))
    p = fuse_bundle(_bundle(pts[perm], conf[perm]))
    np.testing.assert_allclose(a.points, p.points, rtol=1e-12, atol=1e-9)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=9))
def test_raw_and_softmax_argmin_agree(v):
    s = softmax(v)
    raw = int(drop_order(v)[0])
    assert raw == int(np.argmin(v))
    # softmax can round nearly equal inputs to a tie; raw is always one of its minima
    assert s[raw] == s.min()
    if np.count_nonzero(s == s.min()) == 1:
        assert raw == int(np.argmin(s))
