"""On-disk cache for pooled features and reference neighbourhoods."""

from __future__ import annotations

import hashlib
import os

import numpy as np

CACHE_ENV = "PCQA_CACHE_DIR"


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class FeatureCache:
    """Directory of ``.npy`` files addressed by content hashes.

    Feature keys cover both clouds, ``K``, ``eps`` and the feature layout,
    so a hit can never return numbers computed under other settings.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)

    @classmethod
    def from_env(cls, root: str | None = None) -> "FeatureCache | None":
        root = root or os.environ.get(CACHE_ENV)
        return cls(root) if root else None

    @staticmethod
    def feature_key(ref_hash: str, dist_hash: str, k: int, eps: float, layout: str) -> str:
        text = f"features|{ref_hash}|{dist_hash}|{k}|{eps!r}|{layout}"
        return hashlib.sha256(text.encode()).hexdigest()

    @staticmethod
    def neighbor_key(cloud_hash: str, k: int) -> str:
        return hashlib.sha256(f"neighbors|{cloud_hash}|{k}".encode()).hexdigest()

    def _path(self, key: str) -> str:
        return os.path.join(self.root, key[:2], key + ".npy")

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not os.path.isfile(path):
            return None
        try:
            return np.load(path, allow_pickle=False)
        except (OSError, ValueError):
            return None

    def put(self, key: str, value: np.ndarray) -> None:
        path = self._path(key)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = f"{path}.{os.getpid()}.tmp"
        with open(tmp, "wb") as fh:
            np.save(fh, np.asarray(value), allow_pickle=False)
        os.replace(tmp, path)
