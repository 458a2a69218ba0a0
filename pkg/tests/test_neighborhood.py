import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import brute_knn
from pcqa.errors import EmptyCloud
from pcqa.neighborhood import SpatialIndex, pair_indices, pair_neighborhoods
from pcqa.pointcloud import PointCloud


def dense_knn(points, queries, k):
    """Vectorised O(n*m) oracle: full distance matrix, sorted by (d2, index)."""
    d2 = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    idx = np.broadcast_to(np.arange(len(points)), d2.shape)
    return np.lexsort((idx, d2), axis=-1)[:, : min(k, len(points))]


def _cloud(pos):
    return PointCloud(pos, np.zeros_like(pos))


def test_single_point_cloud():
    idx = SpatialIndex([[1.0, 2.0, 3.0]])
    out = idx.query(np.random.default_rng(0).normal(size=(10, 3)), 5)
    assert out.shape == (10, 1)
    assert (out == 0).all()


def test_uniform_cloud_matches_scan(rng):
    pts = rng.random((10_000, 3))
    q = rng.random((100, 3))
    np.testing.assert_array_equal(SpatialIndex(pts).query(q, 8), dense_knn(pts, q, 8))


def test_lattice_center_has_face_neighbors():
    grid = np.stack(np.meshgrid(*[np.arange(3.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    out = SpatialIndex(grid).query([[1.0, 1.0, 1.0]], 7)[0]
    got = {tuple(grid[i]) for i in out}
    expected = {(1, 1, 1), (0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 0), (1, 1, 2)}
    assert got == expected
    assert tuple(grid[out[0]]) == (1, 1, 1)
    # the six equidistant neighbours come back in index order
    assert list(out[1:]) == sorted(out[1:])


def test_lattice_ties_break_by_index(rng):
    grid = np.stack(np.meshgrid(*[np.arange(8.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    grid = grid[rng.permutation(len(grid))]
    q = grid[rng.integers(0, len(grid), 200)]
    for k in (2, 7, 19, 27, 33):
        np.testing.assert_array_equal(SpatialIndex(grid).query(q, k), dense_knn(grid, q, k))


def test_pairing_identical_clouds(rng):
    pc = _cloud(rng.random((500, 3)))
    for pair in pair_neighborhoods(pc, pc, 4):
        np.testing.assert_array_equal(pair.ref_neighbors, pair.dist_neighbors)
        assert pair.ref_neighbors[0] == pair.query_index


def test_pairing_sorts_distorted_by_distance():
    ref = _cloud(np.array([[0.0, 0, 0]]))
    dist = _cloud(np.array([[2.0, 0, 0], [1.0, 0, 0]]))
    (pair,) = list(pair_neighborhoods(ref, dist, 2))
    np.testing.assert_array_equal(dist.positions[pair.dist_neighbors], [[1, 0, 0], [2, 0, 0]])


def test_pairing_5k_clouds_k81(rng):
    ref = _cloud(rng.random((5000, 3)))
    dist = _cloud(rng.random((4000, 3)))
    pn = pair_indices(ref, dist, 81)
    assert (pn.k_ref, pn.k_dist) == (81, 81)
    sel = rng.choice(5000, 300, replace=False)
    q = ref.positions[sel]
    np.testing.assert_array_equal(pn.ref_idx[sel], dense_knn(ref.positions, q, 81))
    np.testing.assert_array_equal(pn.dist_idx[sel], dense_knn(dist.positions, q, 81))


def test_k_clamped_per_cloud(rng):
    ref = _cloud(rng.random((30, 3)))
    dist = _cloud(rng.random((10, 3)))
    pn = pair_indices(ref, dist, 81)
    assert (pn.k_ref, pn.k_dist) == (30, 10)


def test_thread_count_does_not_change_result(rng):
    pts = rng.integers(0, 5, size=(3000, 3)).astype(float) + rng.random((3000, 3)) * 1e-3
    idx = SpatialIndex(pts)
    np.testing.assert_array_equal(idx.query(pts, 81, workers=1), idx.query(pts, 81, workers=4))


def test_invalid_inputs():
    with pytest.raises(EmptyCloud):
        SpatialIndex(np.empty((0, 3)))
    with pytest.raises(ValueError):
        SpatialIndex([[0.0, 0, 0]]).query([[0.0, 0, 0]], 0)


coords = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0, -1.0]))


@given(coords, st.integers(1, 12))
def test_matches_brute_force_with_heavy_ties(pts, k):
    # coordinates drawn from a small set produce many exactly equal distances
    q = np.vstack([pts[:5], [[0.25, 0.25, 0.25]]])
    np.testing.assert_array_equal(SpatialIndex(pts).query(q, k), brute_knn(pts, q, k))


@given(arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=st.floats(-1e3, 1e3)), st.integers(1, 20))
def test_distances_non_decreasing(pts, k):
    out = SpatialIndex(pts).query(pts, k)
    d = np.linalg.norm(pts[out] - pts[:, None, :], axis=-1)
    assert (np.diff(d, axis=1) >= 0).all()
    np.testing.assert_array_equal(out, brute_knn(pts, pts, k))
