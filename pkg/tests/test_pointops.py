import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bagknot.encoder import ball_query, canonicalize_cloud, farthest_point_sample, lexicographic_order, three_nn
from bagknot.errors import InputError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)
clouds = st.integers(2, 60).flatmap(lambda n: arrays(np.float64, (n, 3), elements=finite))


def brute_ball(points, centroids, radius, K):
    """Reference neighbour search written with plain loops."""
    out = []
    for c in centroids:
        d2 = [float(np.sum((p - c) ** 2)) for p in points]
        inside = [i for i, d in enumerate(d2) if d <= radius * radius][:K]
        nearest = min(range(len(points)), key=lambda i: (d2[i], i))
        # pad with the nearest point found; with nothing found, the nearest point overall
        pad = min(inside, key=lambda i: (d2[i], i)) if inside else nearest
        out.append(inside + [pad] * (K - len(inside)))
    return np.array(out, dtype=np.int64)


def brute_fps(points, k):
    out = [int(lexicographic_order(points)[0])]
    while len(out) < k:
        best, best_d = None, -1.0
        for i in range(len(points)):
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in out)
            if d > best_d:
                best, best_d = i, d
        out.append(best)
    return np.array(out)


# -- canonicalisation ------------------------------------------------------------


def test_unit_ball_centered_cloud_is_a_fixed_point():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0.5, 0], [0, -0.5, 0]])
    canon, tf = canonicalize_cloud(pts)
    assert np.allclose(canon, pts, atol=1e-15) and tf.scale == 1.0 and np.allclose(tf.center, 0)


@given(clouds.filter(lambda c: np.ptp(c, axis=0).max() > 1e-3), st.floats(0.1, 10), arrays(np.float64, 3, elements=finite))
def test_canonical_cloud_invariant_to_shift_and_scale(cloud, scale, shift):
    a, _ = canonicalize_cloud(cloud)
    b, _ = canonicalize_cloud(cloud * scale + shift)
    assert np.max(np.abs(a - b)) <= 1e-6
    assert np.max(np.linalg.norm(a, axis=1)) == pytest.approx(1.0)


def test_shift_by_five_and_scale_by_three(rng):
    c = rng.normal(size=(300, 3))
    a, _ = canonicalize_cloud(c)
    assert np.max(np.abs(a - canonicalize_cloud(c + 5.0)[0])) <= 1e-6
    assert np.max(np.abs(a - canonicalize_cloud(c * 3.0)[0])) <= 1e-6


@given(clouds.filter(lambda c: np.ptp(c, axis=0).max() > 1e-3), st.randoms(use_true_random=False))
def test_canonical_cloud_exactly_permutation_equivariant(cloud, r):
    perm = list(range(len(cloud)))
    r.shuffle(perm)
    a, _ = canonicalize_cloud(cloud)
    b, _ = canonicalize_cloud(cloud[perm])
    assert np.array_equal(a[perm], b)


def test_transform_inverts(rng):
    c = rng.normal(size=(50, 3)) + 2
    canon, tf = canonicalize_cloud(c)
    assert np.allclose(tf.invert(canon), c)


def test_degenerate_clouds_rejected():
    with pytest.raises(InputError):
        canonicalize_cloud(np.ones((5, 3)))
    with pytest.raises(InputError):
        canonicalize_cloud(np.zeros((0, 3)))
    with pytest.raises(InputError):
        canonicalize_cloud(np.array([[0, 0, np.nan], [1, 1, 1]]))


# -- farthest point sampling ---------------------------------------------------------


def test_fps_square_picks_diagonal_corners():
    sq = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
    got = farthest_point_sample(sq, 2)
    # oracle: the 2-subsets maximising the pairwise distance are exactly the diagonals
    best = max(np.linalg.norm(sq[i] - sq[j]) for i, j in itertools.combinations(range(4), 2))
    diagonals = {frozenset((i, j)) for i, j in itertools.combinations(range(4), 2) if np.isclose(np.linalg.norm(sq[i] - sq[j]), best)}
    assert frozenset(got.tolist()) in diagonals
    assert diagonals == {frozenset((0, 2)), frozenset((1, 3))}


@given(clouds)
def test_fps_exhaustion_returns_every_index(cloud):
    idx = farthest_point_sample(cloud, len(cloud))
    assert sorted(idx.tolist()) == list(range(len(cloud))) or len(np.unique(cloud, axis=0)) < len(cloud)
    assert len(idx) == len(cloud)


@given(st.integers(2, 40).flatmap(lambda n: arrays(np.float64, (n, 3), elements=st.floats(-1, 1), unique=True)), st.integers(1, 8))
def test_fps_matches_brute_force(cloud, k):
    k = min(k, len(cloud))
    assert np.array_equal(farthest_point_sample(cloud, k), brute_fps(cloud, k))


def test_fps_deterministic(rng):
    c = rng.normal(size=(200, 3))
    assert np.array_equal(farthest_point_sample(c, 20), farthest_point_sample(c, 20))


def test_fps_too_many_rejected():
    with pytest.raises(InputError):
        farthest_point_sample(np.zeros((3, 3)), 4)


# -- ball query --------------------------------------------------------------------------


@given(clouds, st.floats(0.05, 8.0), st.integers(1, 12), st.integers(1, 6))
def test_ball_query_matches_brute_force(cloud, radius, K, m):
    centroids = cloud[: min(m, len(cloud))]
    assert np.array_equal(ball_query(cloud, centroids, radius, K), brute_ball(cloud, centroids, radius, K))


def test_ball_query_strict_membership():
    pts = np.array([[0.0, 0, 0], [0.5 + 1e-9, 0, 0], [0.5, 0, 0]])
    got = ball_query(pts, pts[:1], 0.5, 3)
    assert 1 not in got[0] and got[0].tolist() == [0, 2, 0]


def test_isolated_centroid_gets_its_own_index():
    pts = np.array([[0.0, 0, 0], [5.0, 5, 5], [6.0, 5, 5]])
    assert ball_query(pts, pts[1:2], 0.1, 4)[0].tolist() == [1, 1, 1, 1]


def test_dense_cluster_returns_lowest_indices(rng):
    K = 8
    pts = np.concatenate([rng.normal(size=(10, 3)) * 5 + 20, rng.normal(size=(2 * K, 3)) * 0.01])
    got = ball_query(pts, np.zeros((1, 3)), 0.5, K)
    assert got[0].tolist() == list(range(10, 10 + K))
    assert np.array_equal(got, brute_ball(pts, np.zeros((1, 3)), 0.5, K))


def test_ball_query_twenty_clouds_exact(rng):
    for _ in range(20):
        n = int(rng.integers(16, 513))
        pts = rng.normal(size=(n, 3))
        ctr = pts[farthest_point_sample(pts, min(16, n))]
        assert np.array_equal(ball_query(pts, ctr, 0.4, 16), brute_ball(pts, ctr, 0.4, 16))


def test_ball_query_bad_args():
    with pytest.raises(InputError):
        ball_query(np.zeros((2, 3)), np.zeros((1, 3)), 0.0, 4)


# -- interpolation -------------------------------------------------------------------------


@given(st.integers(3, 60).flatmap(lambda n: arrays(np.float64, (n, 3), elements=st.floats(0, 1))))
def test_three_nn_weights_and_neighbours(jitter):
    cloud = jitter + np.arange(len(jitter))[:, None] * 2.0  # distinct points
    targets = cloud + 0.01
    idx, w = three_nn(targets, cloud)
    assert np.allclose(w.sum(1), 1.0) and np.all(w >= 0)
    d = np.linalg.norm(targets[:, None] - cloud[None], axis=-1)
    kth = np.sort(d, axis=1)[:, 2]
    assert np.all(np.take_along_axis(d, idx, 1) <= kth[:, None] + 1e-12)
