"""Split-protocol benchmark: features, RFE + forest per split, correlation report."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .cache import FeatureCache, file_digest
from .errors import EvaluationError, MissingFile
from .evaluation import SubjectiveDataset, generate_splits, krasula_analysis, plcc, srocc
from .pointcloud import load_ply
from .predictors import DEFAULT_K, EPS, FEATURE_NAMES, LAYOUT_VERSION, StageTimer, extract_features, prepare_reference
from .regression import ForestParams, rfe_select, train_forest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchConfig:
    k: int = DEFAULT_K
    eps: float = EPS
    params: ForestParams = ForestParams()
    folds: int = 5
    test_fraction: float = 0.2
    split_cap: int | None = None
    seed: int = 0
    threads: int = 1
    use_rfe: bool = True
    delta_mos: float | None = None

    def as_dict(self) -> dict:
        # thread counts only affect speed, so they stay out of the echoed config
        d = asdict(self)
        del d["threads"], d["params"]["threads"]
        d["layout_version"] = LAYOUT_VERSION
        return d


def dataset_features(
    ds: SubjectiveDataset,
    k: int = DEFAULT_K,
    eps: float = EPS,
    threads: int = 1,
    cache: FeatureCache | None = None,
    timer: StageTimer | None = None,
) -> np.ndarray:
    """Feature matrix with one row per stimulus, reusing each prepared reference."""
    timer = timer if timer is not None else StageTimer()
    for s in ds.entries:
        for p in (s.ref_path, s.dist_path):
            if not os.path.isfile(p):
                raise MissingFile(f"no such file: {p}")

    X = np.empty((len(ds), len(FEATURE_NAMES)))
    digests: dict[str, str] = {}

    def digest(p):
        if p not in digests:
            digests[p] = file_digest(p)
        return digests[p]

    by_ref: dict[str, list[int]] = {}
    for i, s in enumerate(ds.entries):
        by_ref.setdefault(s.ref_path, []).append(i)

    for ref_path, rows in by_ref.items():
        prepared = None
        for i in rows:
            s = ds.entries[i]
            key = None
            if cache is not None:
                key = FeatureCache.feature_key(digest(ref_path), digest(s.dist_path), k, eps, LAYOUT_VERSION)
                hit = cache.get(key)
                if hit is not None and hit.shape == (len(FEATURE_NAMES),):
                    X[i] = hit
                    continue
            if prepared is None:
                with timer.stage("load"):
                    ref = load_ply(ref_path)
                prepared = prepare_reference(ref, k, threads, timer, cache)
            with timer.stage("load"):
                dist = load_ply(s.dist_path)
            X[i] = extract_features(prepared, dist, k, eps, threads, timer).f
            if cache is not None:
                cache.put(key, X[i])
    return X


@dataclass
class BenchReport:
    config: dict
    dataset: str
    n_splits_total: int
    rows: list[dict] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {"dataset": self.dataset, "n_splits_total": self.n_splits_total, "n_splits_run": len(self.rows)}
        for key in ("srocc", "plcc", "auc", "cc"):
            vals = np.array([r[key] for r in self.rows], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            out[f"{key}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            out[f"{key}_std"] = float(vals.std()) if len(vals) else float("nan")
        return out

    def text(self) -> str:
        s = self.summary()
        lines = [
            f"# config: {json.dumps(self.config, sort_keys=True)}",
            f"dataset: {s['dataset']}",
            f"splits: {s['n_splits_run']} of {s['n_splits_total']}",
        ]
        for key in ("srocc", "plcc", "auc", "cc"):
            lines.append(f"{key.upper():6s} {s[key + '_mean']:.4f} +/- {s[key + '_std']:.4f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike) -> None:
        """``summary.json``, ``report.txt`` and ``splits.csv`` are deterministic; timings go to ``timings.json``."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump({"config": self.config, **self.summary()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(self.text())
        with open(os.path.join(out_dir, "splits.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["split", "test_contents", "n_train", "n_test", "n_selected", "srocc", "plcc", "auc", "cc"])
            for r in self.rows:
                w.writerow([r["split"], "|".join(r["test"]), r["n_train"], r["n_test"], r["n_selected"]]
                           + [repr(r[k]) for k in ("srocc", "plcc", "auc", "cc")])
        with open(os.path.join(out_dir, "timings.json"), "w") as fh:
            json.dump(self.timings, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _safe(fn, *args, **kw) -> float:
    try:
        return fn(*args, **kw)
    except (EvaluationError, ValueError):
        return float("nan")


def evaluate_splits(
    X: np.ndarray,
    ds: SubjectiveDataset,
    config: BenchConfig = BenchConfig(),
    timer: StageTimer | None = None,
) -> BenchReport:
    """Train on each split's training contents and score its held-out contents."""
    timer = timer if timer is not None else StageTimer()
    plan = generate_splits(ds, config.test_fraction)
    chosen = np.arange(len(plan))
    if config.split_cap is not None and config.split_cap < len(plan):
        rng = np.random.default_rng(config.seed)
        chosen = np.sort(rng.choice(len(plan), size=config.split_cap, replace=False))

    y = ds.mos
    ci = ds.ci
    ref_ids = np.array([s.ref_id for s in ds.entries])
    report = BenchReport(config.as_dict(), ds.name, len(plan))
    for split_no in chosen:
        train_c, test_c = plan.splits[split_no]
        train = np.isin(ref_ids, train_c)
        test = ~train
        with timer.stage("regression"):
            if config.use_rfe:
                # grouped folds need two training contents; plain k-fold otherwise
                groups = ref_ids[train] if len(train_c) >= 2 else None
                folds = min(config.folds, len(train_c)) if groups is not None else config.folds
                model = rfe_select(X[train], y[train], config.params, folds, groups=groups).model
            else:
                model = train_forest(X[train], y[train], config.params)
            pred = model.predict(X[test])
        with timer.stage("evaluation"):
            kr = None
            try:
                kr = krasula_analysis(pred, y[test], None if ci is None else ci[test], config.delta_mos)
            except (EvaluationError, ValueError):
                pass
            report.rows.append(
                {
                    "split": int(split_no),
                    "test": list(test_c),
                    "n_train": int(train.sum()),
                    "n_test": int(test.sum()),
                    "n_selected": int(model.selected_mask.sum()),
                    "srocc": _safe(srocc, pred, y[test]),
                    "plcc": _safe(plcc, pred, y[test]),
                    "auc": kr.auc_diff_sim if kr else float("nan"),
                    "cc": kr.cc_better_worse if kr else float("nan"),
                }
            )
        log.info("split %d: srocc=%.4f", split_no, report.rows[-1]["srocc"])
    report.timings = {"threads": config.threads, **timer}
    return report


def benchmark(
    ds: SubjectiveDataset,
    config: BenchConfig = BenchConfig(),
    cache: FeatureCache | None = None,
) -> BenchReport:
    timer = StageTimer()
    X = dataset_features(ds, config.k, config.eps, config.threads, cache, timer)
    return evaluate_splits(X, ds, config, timer)
