"""Agreement with subjective scores, subjective datasets and content splits."""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConstantInput, InputError, MissingFile, NoDifferentPairs

Z_95 = 1.96
DELTA_MOS_FRACTION = 0.1


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise ValueError("need at least 3 scores")
    return x, y


def _pearson(x, y) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(xc @ xc), math.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise ConstantInput("correlation undefined for a constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def plcc(x, y) -> float:
    """Pearson correlation on raw scores (no fitted mapping)."""
    return _pearson(*_pair(x, y))


def srocc(x, y) -> float:
    """Spearman correlation; tied values get their average rank."""
    x, y = _pair(x, y)
    return _pearson(rankdata(x), rankdata(y))


@dataclass(frozen=True)
class KrasulaResult:
    auc_diff_sim: float
    cc_better_worse: float
    n_different: int
    n_similar: int
    threshold: float | None  # MOS gap used when no confidence intervals are given


def krasula_analysis(pred, mos, ci=None, delta_mos: float | None = None, z: float = Z_95) -> KrasulaResult:
    """Pairwise Different/Similar AUC and Better/Worse correct classification.

    A pair is "different" when its MOS gap exceeds ``z`` times the combined
    confidence interval, or ``delta_mos`` (default: 10 % of the observed MOS
    range) without intervals. When every pair is different the AUC is 1.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    mos = np.asarray(mos, dtype=np.float64).ravel()
    if len(pred) != len(mos) or len(pred) < 2:
        raise ValueError("need >= 2 stimuli with one prediction each")
    i, j = np.triu_indices(len(mos), k=1)
    dm, dp = mos[i] - mos[j], pred[i] - pred[j]
    threshold = None
    if ci is not None:
        ci = np.asarray(ci, dtype=np.float64).ravel()
        different = np.abs(dm) > z * np.sqrt(ci[i] ** 2 + ci[j] ** 2)
    else:
        threshold = DELTA_MOS_FRACTION * float(np.ptp(mos)) if delta_mos is None else float(delta_mos)
        different = np.abs(dm) > threshold
    n_diff = int(different.sum())
    n_sim = len(dm) - n_diff
    if n_diff == 0:
        raise NoDifferentPairs("no stimulus pair differs significantly")

    cc = float(np.mean(np.sign(dp[different]) == np.sign(dm[different])))
    if n_sim == 0:
        auc = 1.0
    else:
        # Mann-Whitney U on |prediction gap|, ties counted half
        ranks = rankdata(np.abs(dp))
        u = ranks[different].sum() - n_diff * (n_diff + 1) / 2.0
        auc = float(u / (n_diff * n_sim))
    return KrasulaResult(auc, cc, n_diff, n_sim, threshold)


# -- datasets --------------------------------------------------------------


@dataclass(frozen=True)
class Stimulus:
    ref_id: str
    dist_id: str
    ref_path: str
    dist_path: str
    mos: float
    mos_ci: float | None = None


@dataclass(frozen=True)
class SubjectiveDataset:
    entries: tuple[Stimulus, ...]
    name: str = ""

    def __post_init__(self):
        owner: dict[str, str] = {}
        for s in self.entries:
            if owner.setdefault(s.dist_id, s.ref_id) != s.ref_id:
                raise InputError(f"stimulus {s.dist_id!r} listed under two references")
            if not math.isfinite(s.mos):
                raise InputError(f"stimulus {s.dist_id!r} has non-finite MOS")

    @property
    def contents(self) -> tuple[str, ...]:
        """Distinct reference ids in first-appearance order."""
        return tuple(dict.fromkeys(s.ref_id for s in self.entries))

    @property
    def mos(self) -> np.ndarray:
        return np.array([s.mos for s in self.entries])

    @property
    def ci(self) -> np.ndarray | None:
        if any(s.mos_ci is None for s in self.entries):
            return None
        return np.array([s.mos_ci for s in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


MANIFEST_FIELDS = ("ref_id", "dist_id", "ref_path", "dist_path", "mos")


def load_manifest(path: str | os.PathLike) -> SubjectiveDataset:
    """Read ``ref_id,dist_id,ref_path,dist_path,mos[,ci]``; paths resolve against the manifest's folder."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        missing = [f for f in MANIFEST_FIELDS if f not in (reader.fieldnames or ())]
        if missing:
            raise InputError(f"{path}: manifest lacks columns {missing}")
        for row in reader:
            ci = row.get("ci")
            entries.append(
                Stimulus(
                    ref_id=row["ref_id"],
                    dist_id=row["dist_id"],
                    ref_path=os.path.join(base, row["ref_path"]),
                    dist_path=os.path.join(base, row["dist_path"]),
                    mos=float(row["mos"]),
                    mos_ci=float(ci) if ci not in (None, "") else None,
                )
            )
    return SubjectiveDataset(tuple(entries), name=os.path.splitext(os.path.basename(path))[0])


def write_manifest(ds: SubjectiveDataset, path: str | os.PathLike) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with_ci = ds.ci is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS + (("ci",) if with_ci else ()))
        for s in ds.entries:
            row = [s.ref_id, s.dist_id, os.path.relpath(s.ref_path, base), os.path.relpath(s.dist_path, base), repr(s.mos)]
            if with_ci:
                row.append(repr(s.mos_ci))
            w.writerow(row)


# -- splits ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    splits: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # (train contents, test contents)

    def __len__(self) -> int:
        return len(self.splits)

    def __iter__(self):
        return iter(self.splits)


def test_size(n_contents: int, test_fraction: float = 0.2) -> int:
    t = int(math.floor(test_fraction * n_contents + 0.5))
    return min(max(t, 1), n_contents - 1)


test_size.__test__ = False  # not a pytest test despite the name


def generate_splits(ds: SubjectiveDataset | tuple | list, test_fraction: float = 0.2) -> SplitPlan:
    """Every way of holding out ``round(test_fraction * contents)`` contents."""
    contents = tuple(ds.contents if isinstance(ds, SubjectiveDataset) else dict.fromkeys(ds))
    if len(contents) < 2:
        raise ValueError("need at least 2 contents to split")
    t = test_size(len(contents), test_fraction)
    splits = []
    for test in itertools.combinations(contents, t):
        held = set(test)
        splits.append((tuple(c for c in contents if c not in held), test))
    return SplitPlan(tuple(splits))
