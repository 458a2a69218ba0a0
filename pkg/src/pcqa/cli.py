"""Command-line front end.

Exit codes: 0 success, 2 bad input, 3 model problem, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .bench import BenchConfig, benchmark
from .cache import CACHE_ENV, FeatureCache
from .errors import EvaluationError, InputError, LayoutMismatch, MissingFile, ModelError
from .evaluation import krasula_analysis, load_manifest, plcc, srocc
from .pointcloud import ColorSpace, PointCloud, load_ply, write_ply
from .predictors import DEFAULT_K, EPS, FEATURE_NAMES, LAYOUT_VERSION, StageTimer, extract_features, prepare_reference
from .regression import ForestParams, load_model, rfe_select, save_model, train_forest
from .synth import DistortionSpec, Shape, apply_distortion, make_dataset, make_reference

log = logging.getLogger("pcqa")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_INTERNAL = 0, 2, 3, 4
SCORE_FORMAT = "{:.6f}"


@dataclass(frozen=True)
class RunConfig:
    k: int = DEFAULT_K
    eps: float = EPS
    threads: int = 1
    seed: int = 0
    cache_dir: str | None = None
    color_space: str = "rgb"
    layout_version: str = LAYOUT_VERSION

    def __post_init__(self):
        if self.k < 1:
            raise InputError("--neighbors must be >= 1")
        if self.threads < 1:
            raise InputError("--threads must be >= 1")
        if not self.eps > 0:
            raise InputError("--eps must be > 0")

    def echo(self) -> dict:
        """Settings that determine the numbers (threads and cache location do not)."""
        return {
            "k": self.k,
            "eps": self.eps,
            "seed": self.seed,
            "color_space": self.color_space,
            "layout_version": self.layout_version,
        }

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(
            k=args.neighbors,
            eps=args.eps,
            threads=args.threads,
            seed=args.seed,
            cache_dir=args.cache_dir or os.environ.get(CACHE_ENV),
            color_space=args.color_space,
        )


def _config_line(cfg: dict) -> str:
    return "# config: " + json.dumps(cfg, sort_keys=True)


def _num(x: float) -> str:
    # repr round-trips a double exactly
    return repr(float(x))


def _load_cloud(path: str, cfg: RunConfig) -> PointCloud:
    pc = load_ply(path)
    if cfg.color_space == "ycbcr":
        # colours on disk are already YCbCr, stored as 8-bit values
        return PointCloud(pc.positions, pc.colors / 255.0, ColorSpace.YCBCR)
    return pc


def _cache(cfg: RunConfig) -> FeatureCache | None:
    return FeatureCache(cfg.cache_dir) if cfg.cache_dir else None


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _read_table(path: str) -> tuple[list[str], list[dict]]:
    """CSV with a header row; lines starting with ``#`` are comments."""
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise InputError(f"{where}: not a number: {text!r}") from None


def _read_features(path: str) -> tuple[list[str], list[str], np.ndarray]:
    fields, rows = _read_table(path)
    if fields[:2] != ["ref_id", "dist_id"]:
        raise InputError(f"{path}: expected ref_id,dist_id as the first columns")
    if fields[2:] != list(FEATURE_NAMES):
        raise LayoutMismatch(f"{path}: feature columns do not match layout {LAYOUT_VERSION}")
    X = np.array([[_float(r[name], path) for name in FEATURE_NAMES] for r in rows]).reshape(-1, len(FEATURE_NAMES))
    return [r["ref_id"] for r in rows], [r["dist_id"] for r in rows], X


def _read_mos(path: str) -> dict[str, tuple[float, float | None]]:
    fields, rows = _read_table(path)
    if "dist_id" not in fields or "mos" not in fields:
        raise InputError(f"{path}: needs dist_id and mos columns")
    out = {}
    for r in rows:
        ci = r.get("ci")
        out[r["dist_id"]] = (_float(r["mos"], path), _float(ci, path) if ci not in (None, "") else None)
    return out


def _write_text(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _feature_pairs(args) -> list[tuple[str, str, str, str]]:
    """(ref_id, dist_id, ref_path, dist_path) from positional files or a manifest."""
    if args.manifest:
        ds = load_manifest(args.manifest)
        return [(s.ref_id, s.dist_id, s.ref_path, s.dist_path) for s in ds.entries]
    if not (args.ref and args.dist):
        raise InputError("give REF and DIST files or --manifest")
    for p in (args.ref, args.dist):
        if not os.path.isfile(p):
            raise MissingFile(f"no such file: {p}")
    return [(_stem(args.ref), _stem(args.dist), args.ref, args.dist)]


def _extract_many(pairs, cfg: RunConfig, timer: StageTimer, dump: str | None = None) -> np.ndarray:
    """Feature rows for ``pairs``, preparing each distinct reference once."""
    for _, _, rp, dp in pairs:
        for p in (rp, dp):
            if not os.path.isfile(p):
                raise MissingFile(f"no such file: {p}")
    cache = _cache(cfg)
    X = np.empty((len(pairs), len(FEATURE_NAMES)))
    prepared: dict[str, object] = {}
    for i, (_, _, rp, dp) in enumerate(pairs):
        if rp not in prepared:
            prepared.clear()  # keep at most one prepared reference alive
            prepared[rp] = prepare_reference(_load_cloud(rp, cfg), cfg.k, cfg.threads, timer, cache)
        fv, pm = extract_features(prepared[rp], _load_cloud(dp, cfg), cfg.k, cfg.eps, cfg.threads, timer, return_matrix=True)
        X[i] = fv.f
        if dump is not None:
            _dump_points(pm.values, dump, cfg)
    return X


def _dump_points(values: np.ndarray, path: str, cfg: RunConfig) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_config_line(cfg.echo()) + "\n")
        w = csv.writer(fh)
        w.writerow(["point", *FEATURE_NAMES])
        for i, row in enumerate(values):
            w.writerow([i, *map(_num, row)])


# -- subcommands ---------------------------------------------------------------


def cmd_extract(args) -> int:
    cfg = RunConfig.from_args(args)
    pairs = _feature_pairs(args)
    if args.dump_points and len(pairs) != 1:
        raise InputError("--dump-points needs a single pair")
    X = _extract_many(pairs, cfg, StageTimer(), args.dump_points)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    append = args.append and args.out and os.path.isfile(args.out) and os.path.getsize(args.out) > 0
    if not append:
        buf.write(_config_line(cfg.echo()) + "\n")
        w.writerow(["ref_id", "dist_id", *FEATURE_NAMES])
    for (ref_id, dist_id, _, _), row in zip(pairs, X):
        w.writerow([ref_id, dist_id, *map(_num, row)])
    if append:
        with open(args.out, "a", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        _write_text(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.from_args(args)
    ref_ids, dist_ids, X = _read_features(args.features)
    mos = _read_mos(args.mos)
    missing = [d for d in dist_ids if d not in mos]
    if missing:
        raise InputError(f"{args.mos}: no MOS for {missing[:5]}")
    y = np.array([mos[d][0] for d in dist_ids])
    params = ForestParams(n_trees=args.n_trees, seed=cfg.seed, threads=cfg.threads)
    if args.no_rfe:
        model = train_forest(X, y, params)
    else:
        groups = np.array(ref_ids) if len(set(ref_ids)) >= 2 else None
        folds = min(args.folds, len(set(ref_ids))) if groups is not None else args.folds
        model = rfe_select(X, y, params, folds, groups=groups).model
    model.info["config"] = cfg.echo()
    model.info["rfe"] = not args.no_rfe
    save_model(model, args.out)
    selected = [FEATURE_NAMES[i] for i in np.flatnonzero(model.selected_mask)]
    print(f"trained on {len(y)} stimuli; {len(selected)} features selected")
    if "rfe_cv_srocc" in model.info:
        print(f"cross-validated SROCC {model.info['rfe_cv_srocc']:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = RunConfig.from_args(args)
    model = load_model(args.model)
    _, dist_ids, X = _read_features(args.features)
    pred = model.predict(X) if len(X) else np.empty(0)
    buf = io.StringIO(newline="")
    buf.write(_config_line({**cfg.echo(), "model": model.training_fingerprint}) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dist_id", "score"])
    for d, p in zip(dist_ids, pred):
        w.writerow([d, _num(p)])
    _write_text(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = RunConfig.from_args(args)
    model = load_model(args.model)
    pairs = _feature_pairs(args)
    X = _extract_many(pairs, cfg, StageTimer())
    pred = model.predict(X)
    if args.manifest:
        for (_, dist_id, _, _), p in zip(pairs, pred):
            print(f"{dist_id},{SCORE_FORMAT.format(p)}")
    else:
        print(SCORE_FORMAT.format(pred[0]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    fields, rows = _read_table(args.pred)
    if "dist_id" not in fields or "score" not in fields:
        raise InputError(f"{args.pred}: needs dist_id and score columns")
    mos = _read_mos(args.mos)
    missing = [r["dist_id"] for r in rows if r["dist_id"] not in mos]
    if missing:
        raise InputError(f"{args.mos}: no MOS for {missing[:5]}")
    pred = np.array([_float(r["score"], args.pred) for r in rows])
    y = np.array([mos[r["dist_id"]][0] for r in rows])
    cis = [mos[r["dist_id"]][1] for r in rows]
    ci = None if any(c is None for c in cis) else np.array(cis)
    lines = [
        f"n      {len(y)}",
        f"PLCC   {plcc(pred, y):.6f}",
        f"SROCC  {srocc(pred, y):.6f}",
    ]
    try:
        kr = krasula_analysis(pred, y, ci, args.delta_mos)
        lines += [f"AUC    {kr.auc_diff_sim:.6f}", f"CC     {kr.cc_better_worse:.6f}"]
    except EvaluationError as exc:
        lines.append(f"AUC/CC unavailable: {exc}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = RunConfig.from_args(args)
    ds = load_manifest(args.manifest)
    config = BenchConfig(
        k=cfg.k,
        eps=cfg.eps,
        params=ForestParams(n_trees=args.n_trees, seed=cfg.seed, threads=cfg.threads),
        folds=args.folds,
        test_fraction=args.test_fraction,
        split_cap=args.split_cap,
        seed=cfg.seed,
        threads=cfg.threads,
        use_rfe=not args.no_rfe,
        delta_mos=args.delta_mos,
    )
    if cfg.color_space != "rgb":
        raise InputError("bench reads RGB manifests only")
    report = benchmark(ds, config, _cache(cfg))
    report.write(args.out_dir)
    sys.stdout.write(report.text())
    return EXIT_OK


def cmd_synth(args) -> int:
    pc = make_reference(args.shape, args.n, args.seed)
    for i, text in enumerate(args.distort or ()):
        try:
            spec = DistortionSpec.parse(text, seed=args.seed + 1 + i)
        except ValueError as exc:
            raise InputError(f"--distort {text!r}: {exc}") from None
        pc = apply_distortion(pc, spec)
    write_ply(pc, args.out, binary=args.binary)
    return EXIT_OK


def cmd_synth_dataset(args) -> int:
    ds = make_dataset(args.out_dir, contents=args.contents, n=args.n, seed=args.seed)
    print(f"wrote {len(ds)} stimuli over {len(ds.contents)} contents to {os.path.join(args.out_dir, 'manifest.csv')}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-k", "--neighbors", type=int, default=DEFAULT_K, help="neighbourhood size (default %(default)s)")
    p.add_argument("--eps", type=float, default=EPS, help="guard in relative differences (default %(default)s)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-dir", default=None, help=f"feature/neighbour cache (default ${CACHE_ENV})")
    p.add_argument(
        "--color-space",
        choices=("rgb", "ycbcr"),
        default="rgb",
        help="colour space of the PLY colours; ycbcr skips conversion",
    )


def _pair_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("ref", nargs="?", help="reference PLY")
    p.add_argument("dist", nargs="?", help="distorted PLY")
    p.add_argument("--manifest", help="CSV of pairs (ref_id,dist_id,ref_path,dist_path,mos)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcqa", description="Full-reference point cloud quality assessment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="pooled features for cloud pairs")
    _pair_args(p)
    _common(p)
    p.add_argument("--out", help="feature CSV (default stdout)")
    p.add_argument("--append", action="store_true", help="append rows to an existing --out file")
    p.add_argument("--dump-points", metavar="CSV", help="also write per-point predictors")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a quality model on a feature CSV")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--mos", required=True, help="CSV with dist_id,mos")
    p.add_argument("--out", required=True)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--no-rfe", action="store_true", help="train on all features")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="scores for a feature CSV")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="prediction CSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="quality score of cloud pairs")
    _pair_args(p)
    _common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="correlations between predictions and MOS")
    p.add_argument("--pred", required=True, help="CSV with dist_id,score")
    p.add_argument("--mos", required=True, help="CSV with dist_id,mos[,ci]")
    p.add_argument("--delta-mos", type=float, default=None, help="MOS gap that makes a pair different")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="split-protocol benchmark over a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-cap", type=int, default=None, help="run a seeded subset of splits")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--no-rfe", action="store_true")
    p.add_argument("--delta-mos", type=float, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic (optionally distorted) cloud")
    p.add_argument("--shape", choices=[s.value for s in Shape], required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--distort", action="append", metavar="KIND:LEVEL")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-dataset", help="write a planted-MOS dataset with a manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--contents", type=int, default=6)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_dataset)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"pcqa: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except InputError as exc:
        print(f"pcqa: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"pcqa: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.debug("internal error", exc_info=True)
        print(f"pcqa: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
