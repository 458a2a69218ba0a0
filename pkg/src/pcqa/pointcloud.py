"""Point cloud container, PLY input/output, duplicate merging and colour conversion."""

from __future__ import annotations

import enum
import hashlib
import logging
import os
from dataclasses import dataclass

import numpy as np
import plyfile

from .errors import (
    AlreadyConverted,
    EmptyCloud,
    MalformedHeader,
    MissingFile,
    MissingProperty,
    TruncatedBody,
)

log = logging.getLogger(__name__)

_POSITION_PROPS = ("x", "y", "z")
_COLOR_PROPS = ("red", "green", "blue")

# BT.709 luma weights and chroma scale factors (full range)
KR, KG, KB = 0.2126, 0.7152, 0.0722
CB_SCALE = 2.0 * (1.0 - KB)  # 1.8556
CR_SCALE = 2.0 * (1.0 - KR)  # 1.5748


class ColorSpace(str, enum.Enum):
    RGB8 = "RGB8"
    YCBCR = "YCbCr"


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable set of points with one colour triple per point.

    ``colors`` hold 8-bit channel values (0..255, possibly fractional after
    merging) while ``color_space`` is RGB8, and normalised YCbCr in [0, 1]
    after :func:`rgb_to_ycbcr`.
    """

    positions: np.ndarray
    colors: np.ndarray
    color_space: ColorSpace = ColorSpace.RGB8

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True).reshape(-1, 3)
        col = np.array(self.colors, dtype=np.float64, copy=True).reshape(-1, 3)
        if len(pos) == 0:
            raise EmptyCloud("point cloud has no points")
        if len(pos) != len(col):
            raise ValueError(f"{len(pos)} positions but {len(col)} colours")
        pos.setflags(write=False)
        col.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "color_space", ColorSpace(self.color_space))

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.color_space == other.color_space
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.colors, other.colors)
        )

    __hash__ = None

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.color_space.value.encode())
        h.update(np.ascontiguousarray(self.positions).tobytes())
        h.update(np.ascontiguousarray(self.colors).tobytes())
        return h.hexdigest()


def load_ply(path: str | os.PathLike) -> PointCloud:
    """Read a PLY file (ASCII or binary) into an RGB8 :class:`PointCloud`.

    Vertex order is preserved. Vertex properties other than position and
    colour are ignored with a warning.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    try:
        ply = plyfile.PlyData.read(path)
    except plyfile.PlyHeaderParseError as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    except plyfile.PlyElementParseError as exc:
        raise TruncatedBody(f"{path}: {exc}") from exc
    except (ValueError, EOFError) as exc:
        raise TruncatedBody(f"{path}: {exc}") from exc

    if "vertex" not in ply:
        raise MalformedHeader(f"{path}: no 'vertex' element")
    vertex = ply["vertex"].data
    names = vertex.dtype.names or ()
    missing = [p for p in _POSITION_PROPS if p not in names]
    if missing:
        raise MissingProperty(f"{path}: missing position properties {missing}")
    missing = [p for p in _COLOR_PROPS if p not in names]
    if missing:
        raise MissingProperty(f"{path}: missing colour properties {missing}")
    extra = [n for n in names if n not in _POSITION_PROPS + _COLOR_PROPS]
    if extra:
        log.warning("%s: ignoring vertex properties %s", path, extra)
    if len(vertex) == 0:
        raise EmptyCloud(f"{path}: zero vertices")

    positions = np.column_stack([vertex[p].astype(np.float64) for p in _POSITION_PROPS])
    colors = np.column_stack([vertex[p].astype(np.float64) for p in _COLOR_PROPS])
    return PointCloud(positions, colors, ColorSpace.RGB8)


def write_ply(pc: PointCloud, path: str | os.PathLike, binary: bool = False) -> None:
    """Write ``pc`` as PLY with double coordinates and uchar colours.

    Only RGB8 clouds can be written; colours are rounded to the nearest integer.
    """
    if pc.color_space is not ColorSpace.RGB8:
        raise ValueError("only RGB8 clouds can be written to PLY")
    vertex = np.empty(
        len(pc),
        dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    for i, p in enumerate(_POSITION_PROPS):
        vertex[p] = pc.positions[:, i]
    rgb = np.clip(np.rint(pc.colors), 0, 255).astype(np.uint8)
    for i, p in enumerate(_COLOR_PROPS):
        vertex[p] = rgb[:, i]
    el = plyfile.PlyElement.describe(vertex, "vertex")
    plyfile.PlyData([el], text=not binary, byte_order="<").write(os.fspath(path))


def merge_duplicates(pc: PointCloud) -> PointCloud:
    """Collapse points with bitwise-identical coordinates into one.

    The merged colour is the arithmetic mean of the colours sharing the
    coordinate. Distinct coordinates keep their first-occurrence order.
    """
    keys = np.ascontiguousarray(pc.positions).view(np.uint64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(first) == len(pc):
        return pc

    # relabel groups so that group ids follow first occurrence
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    group = rank[inverse]

    n_groups = len(first)
    counts = np.bincount(group, minlength=n_groups).astype(np.float64)
    sums = np.zeros((n_groups, 3))
    np.add.at(sums, group, pc.colors)
    return PointCloud(pc.positions[first[order]], sums / counts[:, None], pc.color_space)


def rgb_to_ycbcr(pc: PointCloud) -> PointCloud:
    """BT.709 full-range RGB8 -> YCbCr, each channel clamped to [0, 1]."""
    if pc.color_space is not ColorSpace.RGB8:
        raise AlreadyConverted("cloud colours are already YCbCr")
    rgb = pc.colors / 255.0
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    y = KR * r + KG * g + KB * b
    cb = (b - y) / CB_SCALE + 0.5
    cr = (r - y) / CR_SCALE + 0.5
    ycc = np.clip(np.column_stack([y, cb, cr]), 0.0, 1.0)
    return PointCloud(pc.positions, ycc, ColorSpace.YCBCR)
