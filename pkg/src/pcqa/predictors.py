"""Distance functions, per-point predictors, pooling and the extraction pipeline."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .descriptors import GeomDescriptors, TexDescriptors, geometry_descriptors, texture_descriptors
from .local_pca import LocalBasis, local_basis, map_neighborhoods
from .neighborhood import SpatialIndex, build_index
from .pointcloud import ColorSpace, PointCloud, merge_duplicates, rgb_to_ycbcr

EPS = 1e-6
DEFAULT_K = 81
LAYOUT_VERSION = "pcqa-44/1"
CHUNK_ROWS = 2048

_AXES = ("1", "2", "3")
_CHANNELS = ("y", "cb", "cr")

FEATURE_NAMES: tuple[str, ...] = (
    ("g_e_alpha",)
    + tuple(f"g_eps_beta_{m}" for m in _AXES)
    + ("g_origin_alpha",)
    + tuple(f"g_origin_beta_{m}" for m in _AXES)
    + ("g_mean_alpha",)
    + tuple(f"g_mean_beta_{m}" for m in _AXES)
    + tuple(f"g_var_delta_{m}" for m in _AXES)
    + ("g_sumvar_delta",)
    + tuple(f"g_cov_gamma_{m}" for m in _AXES)
    + (
        "g_omni_delta",
        "g_entropy_delta",
        "g_aniso_delta",
        "g_planar_delta",
        "g_linear_delta",
        "g_scatter_delta",
        "g_curv_delta",
    )
    + tuple(f"g_parallel_{m}" for m in _AXES)
    + tuple(f"g_angsim_{m}" for m in _AXES)
    + tuple(f"t_mean_delta_{c}" for c in _CHANNELS)
    + tuple(f"t_var_delta_{c}" for c in _CHANNELS)
    + ("t_sumvar_delta",)
    + tuple(f"t_cov_gamma_{c}" for c in _CHANNELS)
    + ("t_omni_delta", "t_entropy_delta")
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 44


def feature_index(name: str) -> int:
    return FEATURE_NAMES.index(name)


# -- distances -------------------------------------------------------------


def r_alpha(d):
    """Euclidean norm of a difference vector (last axis)."""
    d = np.asarray(d, dtype=np.float64)
    return np.sqrt((d * d).sum(axis=-1))


def r_beta(d):
    return np.abs(d)


def r_gamma(q_a, q_b, q_cross, eps=EPS):
    """Relative difference between variance products and a squared cross term."""
    prod = np.asarray(q_a) * np.asarray(q_b)
    return np.abs(prod - q_cross) / (prod + eps)


def r_delta(phi_a, phi_b, eps=EPS):
    phi_a = np.asarray(phi_a, dtype=np.float64)
    phi_b = np.asarray(phi_b, dtype=np.float64)
    return np.abs(phi_a - phi_b) / (np.abs(phi_a) + np.abs(phi_b) + eps)


def distance(kind: str, *args, eps: float = EPS):
    """Dispatch on ``kind`` in {'alpha', 'beta', 'gamma', 'delta'}."""
    if kind == "alpha":
        return r_alpha(*args)
    if kind == "beta":
        return r_beta(*args)
    if kind == "gamma":
        return r_gamma(*args, eps=eps)
    if kind == "delta":
        return r_delta(*args, eps=eps)
    raise ValueError(f"unknown distance {kind!r}")


# -- predictors ------------------------------------------------------------


def point_predictors(g: GeomDescriptors, t: TexDescriptors, eps: float = EPS) -> np.ndarray:
    """The 44 predictors of each neighbourhood pair, in ``FEATURE_NAMES`` order."""

    def col(x):
        return np.asarray(x)[..., None]

    parts = [
        col(r_alpha(g.e)),
        r_beta(g.eps),
        col(np.abs(g.origin_ref_norm - g.origin_dist_norm)),
        np.abs(np.abs(g.origin_ref_proj) - np.abs(g.origin_dist_proj)),
        col(r_alpha(g.mu_B)),
        r_beta(g.mu_B),
        r_delta(g.var_A, g.var_B, eps),
        col(r_delta(g.sumvar_A, g.sumvar_B, eps)),
        r_gamma(g.var_A, g.var_B, g.cross_cov_diag**2, eps),
        col(r_delta(g.omni_A, g.omni_B, eps)),
        col(r_delta(g.entropy_A, g.entropy_B, eps)),
        col(r_delta(g.aniso_A, g.aniso_B, eps)),
        col(r_delta(g.planar_A, g.planar_B, eps)),
        col(r_delta(g.linear_A, g.linear_B, eps)),
        col(r_delta(g.scatter_A, g.scatter_B, eps)),
        col(r_delta(g.curv_A, g.curv_B, eps)),
        g.parallel,
        g.angsim,
        r_delta(t.mean_A, t.mean_B, eps),
        r_delta(t.var_A, t.var_B, eps),
        col(r_delta(t.sumvar_A, t.sumvar_B, eps)),
        r_gamma(t.var_A, t.var_B, t.cross_cov_diag**2, eps),
        col(r_delta(t.omni_A, t.omni_B, eps)),
        col(r_delta(t.entropy_A, t.entropy_B, eps)),
    ]
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class PredictorMatrix:
    values: np.ndarray  # (|ref|, 44)
    layout_version: str = LAYOUT_VERSION
    k_used: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class FeatureVector:
    f: np.ndarray
    k_used: tuple[int, int] = (0, 0)
    meta: dict = field(default_factory=dict)
    layout_version: str = LAYOUT_VERSION

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, map(float, self.f)))


def pool(pm: PredictorMatrix | np.ndarray) -> FeatureVector:
    """Column means, each summed with correctly rounded ``math.fsum``.

    The result does not depend on row chunking or thread scheduling.
    """
    values = pm.values if isinstance(pm, PredictorMatrix) else np.asarray(pm, dtype=np.float64)
    layout = pm.layout_version if isinstance(pm, PredictorMatrix) else LAYOUT_VERSION
    if values.ndim != 2 or len(values) == 0:
        raise ValueError("predictor matrix must be a non-empty 2-D array")
    n = len(values)
    cols = np.ascontiguousarray(values.T)
    f = np.array([math.fsum(c) / n for c in cols])
    k_used = pm.k_used if isinstance(pm, PredictorMatrix) else (0, 0)
    return FeatureVector(f, k_used=k_used, layout_version=layout)


# -- pipeline --------------------------------------------------------------


class StageTimer(dict):
    """Accumulates wall-clock seconds per named stage."""

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self[name] = self.get(name, 0.0) + time.perf_counter() - t0


def preprocess(pc: PointCloud) -> PointCloud:
    """Merge duplicate coordinates, then convert RGB8 colours to YCbCr."""
    pc = merge_duplicates(pc)
    if pc.color_space is ColorSpace.RGB8:
        pc = rgb_to_ycbcr(pc)
    return pc


@dataclass(frozen=True)
class PreparedReference:
    """Pre-processed reference with its neighbourhoods and local bases.

    Reusable across every distorted version of the same reference.
    """

    cloud: PointCloud
    index: SpatialIndex
    neighbors: np.ndarray  # (n, k_ref)
    basis: LocalBasis  # batched over n
    k: int


def _chunks(n: int):
    return [(s, min(s + CHUNK_ROWS, n)) for s in range(0, n, CHUNK_ROWS)]


def _run_chunks(fn, n: int, threads: int):
    spans = _chunks(n)
    if threads <= 1 or len(spans) == 1:
        for s, e in spans:
            fn(s, e)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool_:
        list(pool_.map(lambda se: fn(*se), spans))


def prepare_reference(
    ref: PointCloud,
    k: int = DEFAULT_K,
    threads: int = 1,
    timer: StageTimer | None = None,
    cache=None,
) -> PreparedReference:
    """Preprocess the reference and compute its neighbourhoods and local bases.

    ``cache`` (a :class:`~pcqa.cache.FeatureCache`) stores the neighbour
    table keyed by the preprocessed cloud's content hash and ``k``.
    """
    timer = timer if timer is not None else StageTimer()
    with timer.stage("preprocess"):
        cloud = preprocess(ref)
    with timer.stage("neighbors"):
        index = build_index(cloud)
        neighbors, key = None, None
        if cache is not None:
            key = cache.neighbor_key(cloud.content_hash(), k)
            hit = cache.get(key)
            if hit is not None and hit.shape == (len(cloud), min(k, len(cloud))):
                neighbors = hit
        if neighbors is None:
            neighbors = index.query(cloud.positions, k, workers=threads)
            if cache is not None:
                cache.put(key, neighbors)
    with timer.stage("local_pca"):
        n = len(cloud)
        lam = np.empty((n, 3))
        vec = np.empty((n, 3, 3))
        cen = np.empty((n, 3))

        def work(s, e):
            b = local_basis(cloud.positions[neighbors[s:e]])
            lam[s:e], vec[s:e], cen[s:e] = b.eigenvalues, b.eigenvectors, b.centroid

        _run_chunks(work, n, threads)
    return PreparedReference(cloud, index, neighbors, LocalBasis(lam, vec, cen), int(k))


def predictor_matrix(
    ref: PreparedReference,
    dist: PointCloud,
    eps: float = EPS,
    threads: int = 1,
    timer: StageTimer | None = None,
) -> PredictorMatrix:
    timer = timer if timer is not None else StageTimer()
    with timer.stage("preprocess"):
        dcloud = preprocess(dist)
    with timer.stage("neighbors"):
        dist_idx = build_index(dcloud).query(ref.cloud.positions, ref.k, workers=threads)

    rp, rc = ref.cloud.positions, ref.cloud.colors
    dp, dc = dcloud.positions, dcloud.colors
    out = np.empty((len(rp), N_FEATURES))

    def work(s, e):
        nb, db = ref.neighbors[s:e], dist_idx[s:e]
        basis = LocalBasis(ref.basis.eigenvalues[s:e], ref.basis.eigenvectors[s:e], ref.basis.centroid[s:e])
        mapped = map_neighborhoods(rp[nb], dp[db], rp[s:e], dp[db[:, 0]], ref_basis=basis)
        g = geometry_descriptors(mapped)
        t = texture_descriptors(rc[nb], dc[db])
        out[s:e] = point_predictors(g, t, eps)

    with timer.stage("descriptors"):
        _run_chunks(work, len(rp), threads)
    return PredictorMatrix(out, k_used=(ref.neighbors.shape[1], dist_idx.shape[1]))


def extract_features(
    ref: PointCloud | PreparedReference,
    dist: PointCloud,
    k: int = DEFAULT_K,
    eps: float = EPS,
    threads: int = 1,
    timer: StageTimer | None = None,
    return_matrix: bool = False,
):
    """Full pipeline from a cloud pair to the pooled 44-feature vector.

    ``ref`` may be a :class:`PreparedReference` to skip redoing the
    reference-side work. With ``return_matrix`` the per-point predictor
    matrix is returned alongside the features.
    """
    timer = timer if timer is not None else StageTimer()
    if not isinstance(ref, PreparedReference):
        ref = prepare_reference(ref, k, threads, timer)
    pm = predictor_matrix(ref, dist, eps, threads, timer)
    with timer.stage("pooling"):
        fv = pool(pm)
    fv = FeatureVector(fv.f, k_used=fv.k_used, meta={"k": ref.k, "eps": eps}, layout_version=fv.layout_version)
    return (fv, pm) if return_matrix else fv
