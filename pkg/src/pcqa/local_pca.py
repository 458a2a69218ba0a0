"""Local PCA on neighbourhoods and mapping onto the reference basis.

Every function here is vectorised over arbitrary leading dimensions, so the
same code serves one neighbourhood or all of them at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neighborhood import NeighborhoodPair
from .pointcloud import PointCloud

_TWO_THIRDS_PI = 2.0 * np.pi / 3.0


@dataclass(frozen=True)
class LocalBasis:
    """Eigen-decomposition of a neighbourhood covariance.

    ``eigenvectors[..., :, m]`` is the m-th principal axis; eigenvalues are
    sorted in descending order.
    """

    eigenvalues: np.ndarray  # (..., 3)
    eigenvectors: np.ndarray  # (..., 3, 3), columns
    centroid: np.ndarray  # (..., 3)


@dataclass(frozen=True)
class MappedNeighborhood:
    omega_ref: np.ndarray  # (..., K_ref, 3)
    omega_dist: np.ndarray  # (..., K_dist, 3)
    omega_q_ref: np.ndarray  # (..., 3)
    omega_q_dist: np.ndarray  # (..., 3)
    ref_basis: LocalBasis
    dist_basis: LocalBasis


def sample_mean(points: np.ndarray) -> np.ndarray:
    # shifting by the first sample keeps constant sets exact
    first = points[..., :1, :]
    return first[..., 0, :] + (points - first).sum(axis=-2) / points.shape[-2]


def covariance(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and 1/N-normalised covariance of ``points`` (..., N, 3)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[-2]
    centroid = sample_mean(points)
    centered = points - centroid[..., None, :]
    cov = (centered.swapaxes(-1, -2) @ centered) / n
    return centroid, 0.5 * (cov + cov.swapaxes(-1, -2))


def _cross(a, b):
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def _dot(a, b):
    return (a * b).sum(axis=-1)


def _eigenvector_simple(a00, a01, a02, a11, a12, a22, ev):
    """Unit eigenvector for an eigenvalue of multiplicity one."""
    r0 = np.stack([a00 - ev, a01, a02], axis=-1)
    r1 = np.stack([a01, a11 - ev, a12], axis=-1)
    r2 = np.stack([a02, a12, a22 - ev], axis=-1)
    c = np.stack([_cross(r0, r1), _cross(r0, r2), _cross(r1, r2)], axis=-2)
    d = _dot(c, c)
    best = np.argmax(d, axis=-1)
    rows = np.arange(len(best))
    vec = c[rows, best]
    dmax = d[rows, best]
    ok = dmax > 0
    out = np.zeros_like(vec)
    out[:, 0] = 1.0
    out[ok] = vec[ok] / np.sqrt(dmax[ok])[:, None]
    return out


def _orthogonal_complement(w):
    """Two unit vectors completing ``w`` to a right-handed orthonormal frame."""
    w0, w1, w2 = w[:, 0], w[:, 1], w[:, 2]
    use_x = np.abs(w0) > np.abs(w1)
    zeros = np.zeros_like(w0)
    # only the selected branch is finite where one of the norms vanishes
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_a = 1.0 / np.sqrt(w0 * w0 + w2 * w2)
        inv_b = 1.0 / np.sqrt(w1 * w1 + w2 * w2)
        u = np.where(
            use_x[:, None],
            np.stack([-w2 * inv_a, zeros, w0 * inv_a], axis=-1),
            np.stack([zeros, w2 * inv_b, -w1 * inv_b], axis=-1),
        )
    return u, _cross(w, u)


def _plane_eigenvectors(a, w):
    """Diagonalise ``a`` restricted to the plane orthogonal to the eigenvector ``w``.

    Returns the two in-plane unit eigenvectors (larger eigenvalue first)
    from a single closed-form Jacobi rotation.
    """
    u, v = _orthogonal_complement(w)
    au = np.einsum("nij,nj->ni", a, u)
    av = np.einsum("nij,nj->ni", a, v)
    puu, puv, pvv = _dot(u, au), _dot(u, av), _dot(v, av)
    phi = 0.5 * np.arctan2(2.0 * puv, puu - pvv)
    c, s = np.cos(phi)[:, None], np.sin(phi)[:, None]
    return c * u + s * v, c * v - s * u


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude component is positive."""
    pick = np.argmax(np.abs(vecs), axis=-2)  # first index on ties
    lead = np.take_along_axis(vecs, pick[..., None, :], axis=-2)
    return np.where(lead < 0, -vecs, vecs)


def eigendecompose(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending, clamped at 0) and sign-fixed eigenvector columns.

    Closed-form non-iterative solver for symmetric 3x3 matrices. The vector
    of the most isolated eigenvalue comes from row cross products; the other
    two from one Jacobi rotation of the 2x2 block on its orthogonal
    complement, so the basis is orthonormal even for near-repeated roots.
    """
    cov = np.asarray(cov, dtype=np.float64)
    lead_shape = cov.shape[:-2]
    a = cov.reshape(-1, 3, 3)
    n = len(a)
    evals = np.zeros((n, 3))
    evecs = np.tile(np.eye(3), (n, 1, 1))

    a00, a01, a02 = a[:, 0, 0], a[:, 0, 1], a[:, 0, 2]
    a11, a12, a22 = a[:, 1, 1], a[:, 1, 2], a[:, 2, 2]
    scale = np.max(np.abs(np.stack([a00, a01, a02, a11, a12, a22], axis=-1)), axis=-1)
    live = scale > 0
    # divide rather than multiply by 1/scale, which overflows for subnormal scales
    safe = np.where(live, scale, 1.0)
    a00, a01, a02, a11, a12, a22 = (x / safe for x in (a00, a01, a02, a11, a12, a22))

    off = a01 * a01 + a02 * a02 + a12 * a12
    diag = live & (off <= 0)
    full = live & (off > 0)

    if diag.any():
        d = np.stack([a00[diag], a11[diag], a22[diag]], axis=-1)
        order = np.argsort(-d, axis=-1, kind="stable")
        evals[diag] = np.take_along_axis(d, order, -1)
        evecs[diag] = np.eye(3)[:, order].transpose(1, 0, 2)

    if full.any():
        b00, b01, b02 = a00[full], a01[full], a02[full]
        b11, b12, b22 = a11[full], a12[full], a22[full]
        q = (b00 + b11 + b22) / 3.0
        c00, c11, c22 = b00 - q, b11 - q, b22 - q
        p = np.sqrt((c00 * c00 + c11 * c11 + c22 * c22 + 2.0 * off[full]) / 6.0)
        m00 = c11 * c22 - b12 * b12
        m01 = b01 * c22 - b12 * b02
        m02 = b01 * b12 - c11 * b02
        det = (c00 * m00 - b01 * m01 + b02 * m02) / (p * p * p)
        half_det = np.clip(0.5 * det, -1.0, 1.0)
        angle = np.arccos(half_det) / 3.0
        # largest root when det >= 0, smallest otherwise: the isolated one
        isolated = q + p * 2.0 * np.where(half_det >= 0, np.cos(angle), np.cos(angle + _TWO_THIRDS_PI))
        w = _eigenvector_simple(b00, b01, b02, b11, b12, b22, isolated)
        m = np.stack(
            [
                np.stack([b00, b01, b02], axis=-1),
                np.stack([b01, b11, b12], axis=-1),
                np.stack([b02, b12, b22], axis=-1),
            ],
            axis=-2,
        )
        x1, x2 = _plane_eigenvectors(m, w)
        vecs = np.stack([w, x1, x2], axis=-1)
        # Rayleigh quotients are accurate even where the trigonometric
        # eigenvalues lose precision (near-repeated roots)
        vals = np.einsum("nim,nij,njm->nm", vecs, m, vecs)
        order = np.argsort(-vals, axis=-1, kind="stable")
        evals[full] = np.take_along_axis(vals, order, -1)
        evecs[full] = np.take_along_axis(vecs, order[:, None, :], -1)

    evals = np.maximum(evals * scale[:, None], 0.0)
    evecs = _fix_signs(evecs)
    return evals.reshape(lead_shape + (3,)), evecs.reshape(lead_shape + (3, 3))


def local_basis(points: np.ndarray) -> LocalBasis:
    centroid, cov = covariance(points)
    lam, vecs = eigendecompose(cov)
    return LocalBasis(lam, vecs, centroid)


def map_neighborhoods(
    ref_points: np.ndarray,
    dist_points: np.ndarray,
    query_ref: np.ndarray,
    query_dist: np.ndarray,
    ref_basis: LocalBasis | None = None,
) -> MappedNeighborhood:
    """Express both neighbourhoods in the reference neighbourhood's PCA frame.

    ``ref_points`` (..., K_ref, 3) and ``dist_points`` (..., K_dist, 3) are
    shifted by the reference centroid and projected on the reference
    eigenvectors; the distorted neighbourhood then gets its own PCA in that
    frame. A precomputed ``ref_basis`` of ``ref_points`` may be supplied.
    """
    if ref_basis is None:
        ref_basis = local_basis(ref_points)
    c = ref_basis.centroid[..., None, :]
    v = ref_basis.eigenvectors
    omega_ref = (ref_points - c) @ v
    omega_dist = (dist_points - c) @ v
    omega_q_ref = ((query_ref - ref_basis.centroid)[..., None, :] @ v)[..., 0, :]
    omega_q_dist = ((query_dist - ref_basis.centroid)[..., None, :] @ v)[..., 0, :]
    dist_basis = local_basis(omega_dist)
    return MappedNeighborhood(omega_ref, omega_dist, omega_q_ref, omega_q_dist, ref_basis, dist_basis)


def map_pair(pair: NeighborhoodPair, ref: PointCloud, dist: PointCloud) -> MappedNeighborhood:
    """Map a single neighbourhood pair; the distorted query is its nearest neighbour."""
    ref_pts = ref.positions[pair.ref_neighbors]
    dist_pts = dist.positions[pair.dist_neighbors]
    return map_neighborhoods(ref_pts, dist_pts, ref.positions[pair.query_index], dist_pts[0])
