"""Exact k-nearest-neighbour search and reference/distorted neighbourhood pairing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud
from .pointcloud import PointCloud

# relative slack separating a genuine gap from float noise at the k-th boundary
_BOUNDARY_RTOL = 1e-9


def _sq_dist(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    diff = points - queries[..., None, :]
    return np.einsum("...i,...i->...", diff, diff)


def _order_rows(d2: np.ndarray, idx: np.ndarray):
    """Sort each row by (squared distance, point index)."""
    if d2.ndim == 1:
        order = np.lexsort((idx, d2))
        return d2[order], idx[order]
    # rows with strictly increasing distances are already in final order
    rows = np.flatnonzero((d2[:, 1:] <= d2[:, :-1]).any(axis=1))
    if len(rows):
        d2, idx = d2.copy(), idx.copy()
        order = np.lexsort((idx[rows], d2[rows]), axis=-1)
        d2[rows] = np.take_along_axis(d2[rows], order, -1)
        idx[rows] = np.take_along_axis(idx[rows], order, -1)
    return d2, idx


class SpatialIndex:
    """kd-tree over a cloud's positions answering exact knn queries.

    Results are sorted by ascending Euclidean distance with ties broken by
    ascending point index, so they are reproducible on lattices and other
    inputs with repeated distances.
    """

    def __init__(self, positions: np.ndarray):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if len(positions) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.positions = positions
        self._tree = cKDTree(positions, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.positions)

    def query(self, queries: np.ndarray, k: int, workers: int = 1) -> np.ndarray:
        """Indices of the ``min(k, n)`` nearest points for each query row."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self.positions)
        k = min(int(k), n)
        if k < 1:
            raise ValueError("k must be >= 1")
        kq = min(k + 1, n)
        _, idx = self._tree.query(queries, k=kq, workers=workers)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(queries), kq)
        d2 = _sq_dist(self.positions[idx], queries)
        d2, idx = _order_rows(d2, idx)
        if kq == k:
            return idx

        # rows where the (k+1)-th candidate is not clearly farther than the
        # k-th may hide equally distant points outside the returned set
        kth = d2[:, k - 1]
        unsafe = np.flatnonzero(d2[:, k] <= kth * (1.0 + _BOUNDARY_RTOL) + 1e-300)
        out = idx[:, :k].copy()
        for row in unsafe:
            radius = np.sqrt(kth[row]) * (1.0 + 4 * _BOUNDARY_RTOL) + 1e-150
            cand = np.asarray(self._tree.query_ball_point(queries[row], radius), dtype=np.int64)
            cd2 = _sq_dist(self.positions[cand], queries[row])
            _, cidx = _order_rows(cd2, cand)
            out[row] = cidx[:k]
        return out


def build_index(pc: PointCloud) -> SpatialIndex:
    return SpatialIndex(pc.positions)


@dataclass(frozen=True)
class NeighborhoodPair:
    query_index: int
    ref_neighbors: np.ndarray
    dist_neighbors: np.ndarray


@dataclass(frozen=True)
class PairedNeighborhoods:
    """All neighbourhood pairs of a cloud pair, one row per reference point."""

    ref_idx: np.ndarray  # (|ref|, k_ref)
    dist_idx: np.ndarray  # (|ref|, k_dist)

    @property
    def k_ref(self) -> int:
        return self.ref_idx.shape[1]

    @property
    def k_dist(self) -> int:
        return self.dist_idx.shape[1]

    def __len__(self) -> int:
        return len(self.ref_idx)

    def __iter__(self) -> Iterator[NeighborhoodPair]:
        for i in range(len(self)):
            yield NeighborhoodPair(i, self.ref_idx[i], self.dist_idx[i])


def pair_indices(
    ref: PointCloud,
    dist: PointCloud,
    k: int,
    workers: int = 1,
    ref_index: SpatialIndex | None = None,
    dist_index: SpatialIndex | None = None,
) -> PairedNeighborhoods:
    """Bulk form of :func:`pair_neighborhoods`.

    ``k`` is clamped independently per cloud; the counts actually used are
    available as ``k_ref`` / ``k_dist`` on the result.
    """
    if len(ref) == 0 or len(dist) == 0:
        raise EmptyCloud("both clouds must be non-empty")
    if k < 1:
        raise ValueError("K must be >= 1")
    ref_index = ref_index or build_index(ref)
    dist_index = dist_index or build_index(dist)
    q = ref.positions
    return PairedNeighborhoods(
        ref_idx=ref_index.query(q, k, workers=workers),
        dist_idx=dist_index.query(q, k, workers=workers),
    )


def pair_neighborhoods(ref: PointCloud, dist: PointCloud, k: int, workers: int = 1) -> Iterator[NeighborhoodPair]:
    """Yield one :class:`NeighborhoodPair` per reference point, in index order."""
    return iter(pair_indices(ref, dist, k, workers=workers))
