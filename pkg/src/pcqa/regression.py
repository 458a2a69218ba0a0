"""Random-forest quality regression, recursive feature elimination, model files.

Trees are grown with scikit-learn and then exported to flat arrays; the
exported form is what predicts, so a trained model is independent of the
library version once saved.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.model_selection import GroupKFold, KFold

from .errors import ConstantInput, CorruptFile, LayoutMismatch, VersionMismatch
from .evaluation import srocc
from .predictors import LAYOUT_VERSION, FeatureVector

MAGIC = b"PCQA-MODEL\n"
FORMAT_VERSION = 1


class DegenerateTarget(UserWarning):
    """All training targets are equal; the model predicts that constant."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    features_per_split: float = 1.0
    bootstrap: bool = True
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.features_per_split <= 1:
            raise ValueError("features_per_split must be in (0, 1]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass(frozen=True)
class Tree:
    """Axis-aligned regression tree in flat-array form; leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x32: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x32), dtype=np.int64)
        rows = np.arange(len(x32))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            r, n, f = rows[inner], node[inner], feat[inner]
            go_left = x32[r, f] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])


@dataclass
class QualityModel:
    trees: list[Tree]
    selected_mask: np.ndarray
    params: ForestParams
    layout_version: str = LAYOUT_VERSION
    training_fingerprint: str = ""
    importances: np.ndarray | None = None  # over all columns, zero where masked out
    info: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.selected_mask)

    def predict(self, X) -> np.ndarray:
        """Scores for rows of ``X`` (full feature width, unmasked)."""
        if isinstance(X, FeatureVector):
            if X.layout_version != self.layout_version:
                raise LayoutMismatch(f"features use layout {X.layout_version!r}, model expects {self.layout_version!r}")
            X = X.f
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise LayoutMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        # thresholds were learned on float32 inputs
        x32 = X[:, self.selected_mask].astype(np.float32)
        acc = np.zeros(len(X))
        for tree in self.trees:
            acc += tree.predict(x32)
        return acc / len(self.trees)


def _params_record(params: ForestParams) -> dict:
    # thread count never changes the fitted trees, so it is not recorded
    d = asdict(params)
    d.pop("threads")
    return d


def _fingerprint(X, y, params: ForestParams, mask) -> str:
    h = hashlib.sha256()
    for arr in (np.ascontiguousarray(X, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64), np.asarray(mask)):
        h.update(arr.tobytes())
    h.update(json.dumps(_params_record(params), sort_keys=True).encode())
    return h.hexdigest()


def _export_tree(est) -> Tree:
    t = est.tree_
    return Tree(
        feature=np.where(t.children_left < 0, -1, t.feature).astype(np.int64),
        threshold=t.threshold.astype(np.float64),
        left=t.children_left.astype(np.int64),
        right=t.children_right.astype(np.int64),
        value=t.value[:, 0, 0].astype(np.float64).copy(),
    )


def train_forest(
    X,
    y,
    params: ForestParams = ForestParams(),
    mask=None,
    layout_version: str = LAYOUT_VERSION,
) -> QualityModel:
    """Fit a seeded random forest on the columns of ``X`` selected by ``mask``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one target per row")
    if len(X) < 1 or X.shape[1] < 1:
        raise ValueError("need at least one row and one feature")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    mask = np.ones(X.shape[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no feature")
    if np.ptp(y) == 0:
        warnings.warn("all training targets are equal", DegenerateTarget, stacklevel=2)

    forest = RandomForestRegressor(
        n_estimators=params.n_trees,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_leaf,
        max_features=params.features_per_split,
        bootstrap=params.bootstrap,
        random_state=params.seed,
        n_jobs=params.threads,
    )
    forest.fit(X[:, mask], y)
    importances = np.zeros(X.shape[1])
    importances[mask] = forest.feature_importances_
    return QualityModel(
        trees=[_export_tree(e) for e in forest.estimators_],
        selected_mask=mask.copy(),
        params=params,
        layout_version=layout_version,
        training_fingerprint=_fingerprint(X, y, params, mask),
        importances=importances,
    )


def predict(model: QualityModel, x) -> float | np.ndarray:
    out = model.predict(x)
    return float(out[0]) if np.ndim(getattr(x, "f", x)) == 1 else out


def _folds(n: int, folds: int, groups, seed: int):
    if groups is not None:
        groups = np.asarray(groups)
        k = min(folds, len(np.unique(groups)))
        if k < 2:
            raise ValueError("grouped cross-validation needs at least 2 groups")
        return list(GroupKFold(n_splits=k).split(np.zeros(n), groups=groups))
    return list(KFold(n_splits=min(folds, n), shuffle=True, random_state=seed).split(np.zeros(n)))


def cv_srocc(X, y, params: ForestParams, mask, splits) -> float:
    """SROCC of pooled out-of-fold predictions (0 when they carry no ranking)."""
    pred = np.empty(len(y))
    for train, test in splits:
        model = train_forest(X[train], y[train], params, mask)
        pred[test] = model.predict(X[test])
    try:
        return srocc(pred, y)
    except ConstantInput:
        return 0.0


@dataclass
class RFEResult:
    mask: np.ndarray
    model: QualityModel
    history: list[tuple[np.ndarray, float]]  # (mask, cv srocc) from all features down to one

    @property
    def best_score(self) -> float:
        n_sel = int(self.mask.sum())
        return next(s for m, s in self.history if int(m.sum()) == n_sel)


def rfe_select(X, y, params: ForestParams = ForestParams(), folds: int = 5, groups=None) -> RFEResult:
    """Recursive feature elimination scored by cross-validated SROCC.

    One feature (the least important by impurity decrease) is removed per
    round until a single one remains. The subset with the best CV SROCC wins,
    the smaller subset on ties, and the returned model is refit on all rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < folds or folds < 2:
        raise ValueError("need n >= folds >= 2")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTarget)
        splits = _folds(n, folds, groups, params.seed)
        mask = np.ones(d, dtype=bool)
        history: list[tuple[np.ndarray, float]] = []
        while True:
            score = cv_srocc(X, y, params, mask, splits)
            history.append((mask.copy(), score))
            if mask.sum() == 1:
                break
            imp = train_forest(X, y, params, mask).importances
            active = np.flatnonzero(mask)
            mask[active[np.argmin(imp[active])]] = False

    best_mask, best = history[0]
    for m, s in history[1:]:
        if s >= best:
            best_mask, best = m, s
    model = train_forest(X, y, params, best_mask)
    model.info["rfe_cv_srocc"] = best
    return RFEResult(best_mask, model, history)


# -- persistence -----------------------------------------------------------


def save_model(model: QualityModel, path: str | os.PathLike) -> None:
    offsets = np.cumsum([0] + [len(t.value) for t in model.trees])
    arrays = {
        name: np.concatenate([getattr(t, name) for t in model.trees])
        for name in ("feature", "threshold", "left", "right", "value")
    }
    buf = io.BytesIO()
    np.savez(
        buf,
        offsets=offsets,
        selected_mask=model.selected_mask,
        importances=model.importances if model.importances is not None else np.zeros(model.n_features),
        **arrays,
    )
    payload = buf.getvalue()
    header = {
        "format": FORMAT_VERSION,
        "layout_version": model.layout_version,
        "params": _params_record(model.params),
        "n_trees": len(model.trees),
        "n_features": model.n_features,
        "selected": [int(i) for i in np.flatnonzero(model.selected_mask)],
        "training_fingerprint": model.training_fingerprint,
        "info": model.info,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_model(path: str | os.PathLike, expected_layout: str | None = LAYOUT_VERSION) -> QualityModel:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CorruptFile(f"cannot read model {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise CorruptFile(f"{path}: not a model file")
    head_end = raw.find(b"\n", len(MAGIC))
    if head_end < 0:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC) : head_end])
    except ValueError as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    if header.get("format") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: model format {header.get('format')}, expected {FORMAT_VERSION}")
    if expected_layout is not None and header.get("layout_version") != expected_layout:
        raise VersionMismatch(f"{path}: feature layout {header.get('layout_version')!r}, expected {expected_layout!r}")
    payload = raw[head_end + 1 :]
    if len(payload) != header.get("payload_bytes") or hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptFile(f"{path}: payload truncated or damaged")
    try:
        with np.load(io.BytesIO(payload)) as z:
            data = {k: z[k] for k in z.files}
        off = data["offsets"]
        trees = [
            Tree(*(data[name][off[i] : off[i + 1]] for name in ("feature", "threshold", "left", "right", "value")))
            for i in range(len(off) - 1)
        ]
        params = ForestParams(**header["params"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return QualityModel(
        trees=trees,
        selected_mask=data["selected_mask"].astype(bool),
        params=params,
        layout_version=header["layout_version"],
        training_fingerprint=header.get("training_fingerprint", ""),
        importances=data["importances"],
        info=header.get("info", {}),
    )
