"""Per-neighbourhood geometric and textural descriptors.

All arrays carry arbitrary leading (batch) dimensions; a single neighbourhood
is simply the empty batch.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .local_pca import MappedNeighborhood, sample_mean

GUARD = 1e-12


def _ratio(num, den):
    den = np.asarray(den, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den < GUARD, 0.0, num / np.where(den < GUARD, 1.0, den))
    return out


def _entropy(values):
    values = np.maximum(values, 0.0)
    return -(values * np.log(np.maximum(values, GUARD))).sum(axis=-1)


def _variance(centered):
    n = centered.shape[-2]
    return np.einsum("...ni,...ni->...i", centered, centered) / n


def _cross_variance(centered_a, centered_b):
    # samples are paired by neighbour rank
    n = min(centered_a.shape[-2], centered_b.shape[-2])
    return np.einsum("...ni,...ni->...i", centered_a[..., :n, :], centered_b[..., :n, :]) / n


@dataclass(frozen=True)
class ShapeFeatures:
    omni: np.ndarray
    entropy: np.ndarray
    aniso: np.ndarray
    planar: np.ndarray
    linear: np.ndarray
    scatter: np.ndarray
    curv: np.ndarray


def shape_features(eigenvalues: np.ndarray) -> ShapeFeatures:
    """Eigenvalue shape descriptors; ``eigenvalues`` sorted descending."""
    lam = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    total = lam.sum(axis=-1)
    return ShapeFeatures(
        omni=np.cbrt(l1 * l2 * l3),
        entropy=_entropy(lam),
        aniso=_ratio(l1 - l3, l1),
        planar=_ratio(l2 - l3, l1),
        linear=_ratio(l1 - l2, l1),
        scatter=_ratio(l3, l1),
        curv=_ratio(l3, total),
    )


@dataclass(frozen=True)
class GeomDescriptors:
    e: np.ndarray  # (..., 3)
    eps: np.ndarray  # (..., 3)
    origin_ref_norm: np.ndarray
    origin_ref_proj: np.ndarray  # (..., 3)
    origin_dist_norm: np.ndarray
    origin_dist_proj: np.ndarray  # (..., 3)
    mu_B: np.ndarray  # (..., 3)
    var_A: np.ndarray  # (..., 3)
    var_B: np.ndarray  # (..., 3)
    sumvar_A: np.ndarray
    sumvar_B: np.ndarray
    cross_cov_diag: np.ndarray  # (..., 3)
    omni_A: np.ndarray
    omni_B: np.ndarray
    entropy_A: np.ndarray
    entropy_B: np.ndarray
    aniso_A: np.ndarray
    aniso_B: np.ndarray
    planar_A: np.ndarray
    planar_B: np.ndarray
    linear_A: np.ndarray
    linear_B: np.ndarray
    scatter_A: np.ndarray
    scatter_B: np.ndarray
    curv_A: np.ndarray
    curv_B: np.ndarray
    parallel: np.ndarray  # (..., 3)
    angsim: np.ndarray  # (..., 3)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class TexDescriptors:
    mean_A: np.ndarray  # (..., 3)
    mean_B: np.ndarray
    var_A: np.ndarray
    var_B: np.ndarray
    sumvar_A: np.ndarray
    sumvar_B: np.ndarray
    cross_cov_diag: np.ndarray
    omni_A: np.ndarray
    omni_B: np.ndarray
    entropy_A: np.ndarray
    entropy_B: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def geometry_descriptors(m: MappedNeighborhood) -> GeomDescriptors:
    e = m.omega_q_dist - m.omega_q_ref

    mu_A = sample_mean(m.omega_ref)
    mu_B = m.dist_basis.centroid
    cen_A = m.omega_ref - mu_A[..., None, :]
    cen_B = m.omega_dist - mu_B[..., None, :]
    var_A = _variance(cen_A)
    var_B = _variance(cen_B)

    shape_A = shape_features(m.ref_basis.eigenvalues)
    shape_B = shape_features(m.dist_basis.eigenvalues)

    # u_m . v_m^B is the m-th component of the m-th distorted eigenvector
    vB = m.dist_basis.eigenvectors
    along = np.diagonal(vB, axis1=-2, axis2=-1)
    across = np.sqrt(np.maximum((vB * vB).sum(axis=-2) - along * along, 0.0))
    angle = np.arctan2(across, np.abs(along))

    return GeomDescriptors(
        e=e,
        eps=e.copy(),
        origin_ref_norm=np.linalg.norm(m.omega_q_ref, axis=-1),
        origin_ref_proj=m.omega_q_ref,
        origin_dist_norm=np.linalg.norm(m.omega_q_dist, axis=-1),
        origin_dist_proj=m.omega_q_dist,
        mu_B=mu_B,
        var_A=var_A,
        var_B=var_B,
        sumvar_A=var_A.sum(axis=-1),
        sumvar_B=var_B.sum(axis=-1),
        cross_cov_diag=_cross_variance(cen_A, cen_B),
        omni_A=shape_A.omni,
        omni_B=shape_B.omni,
        entropy_A=shape_A.entropy,
        entropy_B=shape_B.entropy,
        aniso_A=shape_A.aniso,
        aniso_B=shape_B.aniso,
        planar_A=shape_A.planar,
        planar_B=shape_B.planar,
        linear_A=shape_A.linear,
        linear_B=shape_B.linear,
        scatter_A=shape_A.scatter,
        scatter_B=shape_B.scatter,
        curv_A=shape_A.curv,
        curv_B=shape_B.curv,
        parallel=1.0 - np.abs(along),
        angsim=1.0 - 2.0 * angle / np.pi,
    )


def texture_descriptors(ref_tex: np.ndarray, dist_tex: np.ndarray) -> TexDescriptors:
    """Colour statistics of two neighbourhoods given as (..., K, 3) YCbCr samples."""
    ref_tex = np.asarray(ref_tex, dtype=np.float64)
    dist_tex = np.asarray(dist_tex, dtype=np.float64)
    mean_A = sample_mean(ref_tex)
    mean_B = sample_mean(dist_tex)
    cen_A = ref_tex - mean_A[..., None, :]
    cen_B = dist_tex - mean_B[..., None, :]
    var_A = _variance(cen_A)
    var_B = _variance(cen_B)
    return TexDescriptors(
        mean_A=mean_A,
        mean_B=mean_B,
        var_A=var_A,
        var_B=var_B,
        sumvar_A=var_A.sum(axis=-1),
        sumvar_B=var_B.sum(axis=-1),
        cross_cov_diag=_cross_variance(cen_A, cen_B),
        omni_A=np.cbrt(np.abs(var_A.prod(axis=-1))),
        omni_B=np.cbrt(np.abs(var_B.prod(axis=-1))),
        entropy_A=_entropy(var_A),
        entropy_B=_entropy(var_B),
    )
