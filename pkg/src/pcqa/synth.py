"""Synthetic reference clouds and seeded distortions for desk-scale validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .pointcloud import ColorSpace, PointCloud


class Shape(str, enum.Enum):
    PLANE = "plane"
    SPHERE = "sphere"
    CUBE_VOLUME = "cube_volume"
    COLORED_GRADIENT_SPHERE = "colored_gradient_sphere"
    TORUS = "torus"
    ELLIPSOID = "ellipsoid"
    WAVE = "wave"
    CYLINDER = "cylinder"


class DistortionKind(str, enum.Enum):
    GEOM_GAUSS_NOISE = "geom_gauss_noise"
    GEOM_QUANTIZE = "geom_quantize"
    DOWNSAMPLE = "downsample"
    COLOR_GAUSS_NOISE = "color_gauss_noise"
    COLOR_QUANTIZE = "color_quantize"


# four levels per kind, ordered from mild to severe
SEVERITY_LEVELS: dict[DistortionKind, tuple[float, ...]] = {
    DistortionKind.GEOM_GAUSS_NOISE: (0.0005, 0.001, 0.002, 0.004),
    DistortionKind.GEOM_QUANTIZE: (0.002, 0.004, 0.008, 0.016),
    DistortionKind.DOWNSAMPLE: (0.8, 0.6, 0.4, 0.2),
    DistortionKind.COLOR_GAUSS_NOISE: (2.0, 4.0, 8.0, 16.0),
    DistortionKind.COLOR_QUANTIZE: (4.0, 8.0, 16.0, 32.0),
}


@dataclass(frozen=True)
class DistortionSpec:
    """One seeded distortion.

    ``level`` units depend on ``kind``: geometric noise sigma as a fraction
    of the bounding-box diagonal, geometric quantisation step in coordinate
    units, kept fraction for downsampling, 8-bit colour units otherwise.
    """

    kind: DistortionKind
    level: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DistortionKind(self.kind))
        if not self.level > 0:
            raise ValueError("distortion level must be > 0")
        if self.kind is DistortionKind.DOWNSAMPLE and self.level > 1:
            raise ValueError("downsample keep fraction must be in (0, 1]")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "DistortionSpec":
        """Parse ``kind:level`` as used on the command line."""
        kind, sep, level = text.partition(":")
        if not sep:
            raise ValueError(f"expected kind:level, got {text!r}")
        return cls(DistortionKind(kind.strip()), float(level), seed)


def _unit_sphere(rng, n):
    u = rng.normal(size=(n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _smooth_colors(pos):
    return np.rint(255.0 * (0.15 + 0.7 * np.clip(pos, 0.0, 1.0)))


def make_reference(shape: Shape | str, n: int, seed: int = 0) -> PointCloud:
    """Deterministic sample of ``shape`` inside the unit box, with a smooth RGB field."""
    shape = Shape(shape)
    if n < 10:
        raise ValueError("n must be >= 10")
    rng = np.random.default_rng(seed)
    if shape is Shape.PLANE:
        xy = rng.random((n, 2))
        pos = np.column_stack([xy, np.zeros(n)])
        col = _smooth_colors(np.column_stack([xy, 0.5 * (xy[:, 0] + xy[:, 1])]))
    elif shape in (Shape.SPHERE, Shape.COLORED_GRADIENT_SPHERE):
        u = _unit_sphere(rng, n)
        pos = 0.5 + 0.5 * u
        if shape is Shape.SPHERE:
            col = _smooth_colors(pos)
        else:
            # hue sweeps around the z axis, brightness follows latitude
            hue = (np.arctan2(u[:, 1], u[:, 0]) / (2 * np.pi)) % 1.0
            light = 0.35 + 0.3 * (u[:, 2] + 1.0)
            phase = hue[:, None] * 2 * np.pi + np.array([0.0, 2.0, 4.0]) * np.pi / 3
            col = np.rint(255.0 * np.clip(light[:, None] * (0.5 + 0.5 * np.cos(phase)), 0, 1))
    elif shape is Shape.CUBE_VOLUME:
        pos = rng.random((n, 3))
        col = _smooth_colors(pos)
    elif shape is Shape.ELLIPSOID:
        u = _unit_sphere(rng, n)
        pos = 0.5 + u * np.array([0.5, 0.3, 0.2])
        col = _smooth_colors(np.column_stack([pos[:, 0], 1.0 - pos[:, 1], pos[:, 2]]))
    elif shape is Shape.WAVE:
        # smooth height field over the unit square
        xy = rng.random((n, 2))
        z = 0.5 + 0.1 * np.sin(2 * np.pi * xy[:, 0]) * np.cos(2 * np.pi * xy[:, 1])
        pos = np.column_stack([xy, z])
        col = _smooth_colors(np.column_stack([z * 2 - 0.5, xy[:, 1], xy[:, 0]]))
    elif shape is Shape.CYLINDER:
        a, h = rng.random(n) * 2 * np.pi, rng.random(n)
        pos = np.column_stack([0.5 + 0.3 * np.cos(a), 0.5 + 0.3 * np.sin(a), h])
        col = _smooth_colors(np.column_stack([h, a / (2 * np.pi), 1.0 - h]))
    else:
        # torus with major radius 0.35 and minor radius 0.15, centred in the box
        a, b = rng.random(n) * 2 * np.pi, rng.random(n) * 2 * np.pi
        ring = 0.35 + 0.15 * np.cos(b)
        pos = 0.5 + np.column_stack([ring * np.cos(a), ring * np.sin(a), 0.15 * np.sin(b)])
        col = _smooth_colors(np.column_stack([a / (2 * np.pi), b / (2 * np.pi), pos[:, 2]]))
    return PointCloud(pos, col, ColorSpace.RGB8)


def bbox_diagonal(pc: PointCloud) -> float:
    return float(np.linalg.norm(pc.positions.max(axis=0) - pc.positions.min(axis=0)))


def apply_distortion(pc: PointCloud, spec: DistortionSpec) -> PointCloud:
    rng = np.random.default_rng(spec.seed)
    pos, col = pc.positions, pc.colors
    kind = spec.kind
    if kind is DistortionKind.GEOM_GAUSS_NOISE:
        sigma = spec.level * bbox_diagonal(pc)
        pos = pos + rng.normal(scale=sigma, size=pos.shape)
    elif kind is DistortionKind.GEOM_QUANTIZE:
        pos = np.rint(pos / spec.level) * spec.level
    elif kind is DistortionKind.DOWNSAMPLE:
        keep = max(1, int(round(spec.level * len(pc))))
        if keep < len(pc):
            idx = np.sort(rng.choice(len(pc), size=keep, replace=False))
            pos, col = pos[idx], col[idx]
    elif kind is DistortionKind.COLOR_GAUSS_NOISE:
        col = np.clip(np.rint(col + rng.normal(scale=spec.level, size=col.shape)), 0, 255)
    elif kind is DistortionKind.COLOR_QUANTIZE:
        col = np.clip(np.rint(col / spec.level) * spec.level, 0, 255)
    return PointCloud(pos, col, pc.color_space)


def make_dataset(
    out_dir: str,
    contents: int = 6,
    n: int = 4000,
    seed: int = 0,
    kinds: tuple[DistortionKind, ...] = tuple(DistortionKind),
    binary: bool = True,
):
    """Write a planted-MOS dataset: every kind at each of its four severities.

    MOS depends only on the severity rank (4, 3, 2, 1), so any quality
    metric that orders severities correctly reaches SROCC 1. Returns the
    :class:`~pcqa.evaluation.SubjectiveDataset` and writes ``manifest.csv``.
    """
    import os

    from .evaluation import Stimulus, SubjectiveDataset, write_manifest
    from .pointcloud import write_ply

    shapes = [Shape.SPHERE, Shape.COLORED_GRADIENT_SPHERE, Shape.TORUS, Shape.ELLIPSOID, Shape.WAVE, Shape.CYLINDER]
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for c in range(contents):
        ref_id = f"content{c:02d}"
        ref = make_reference(shapes[c % len(shapes)], n, seed * 1000 + c)
        ref_path = os.path.join(out_dir, f"{ref_id}.ply")
        write_ply(ref, ref_path, binary=binary)
        for kind in kinds:
            for rank, level in enumerate(SEVERITY_LEVELS[kind]):
                dist_id = f"{ref_id}_{kind.value}_{rank}"
                spec = DistortionSpec(kind, level, seed * 100000 + c * 100 + rank)
                dist_path = os.path.join(out_dir, f"{dist_id}.ply")
                write_ply(apply_distortion(ref, spec), dist_path, binary=binary)
                entries.append(Stimulus(ref_id, dist_id, ref_path, dist_path, float(len(SEVERITY_LEVELS[kind]) - rank)))
    ds = SubjectiveDataset(tuple(entries), name="synthetic")
    write_manifest(ds, os.path.join(out_dir, "manifest.csv"))
    return ds
