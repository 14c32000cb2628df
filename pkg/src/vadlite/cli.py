"""Command-line interface: fit / score / eval / bench / footprint.

Configuration comes from flags and optionally a key=value text file
(--config); flags win. Exit codes: 0 success, 2 validation error,
3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import struct
import sys

import numpy as np

from . import anomaly_map, bank, evaluate, features, gaussian, pq, search
from .errors import FormatError, NumericError, ValidationError

METHODS = ("padim-full", "padim-lite", "patchcore-exhaustive", "patchcore-lite")

DEFAULTS = {
    "epsilon": 0.01,
    "coreset_size": 10000,
    "m": 8,
    "b": 8,
    "k": 1000,
    "mode": "adc",
    "sigma": 4.0,
    "seed": 0,
    "threads": 0,
    "reps": 3,
}


def _kb(n: int) -> str:
    return f"{n / 1024:.2f} KB"


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for ln in f:
                ln = ln.strip()
                if not ln or ln.startswith("#"):
                    continue
                if "=" not in ln:
                    raise ValidationError(f"{path}: malformed config line {ln!r}")
                key, val = ln.split("=", 1)
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as e:
        raise FormatError(f"cannot read config file {path}: {e}") from e
    return values


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then from the defaults table."""
    file_vals = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            if key in file_vals:
                setattr(args, key, type(default)(file_vals[key]))
            elif hasattr(args, key):
                setattr(args, key, default)
    for key in ("method", "manifest", "model", "out", "features", "pixel_h", "pixel_w"):
        if getattr(args, key, None) is None and key in file_vals:
            setattr(args, key, file_vals[key])
    return args


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ValidationError(f"missing required option --{name.replace('_', '-')}")


def _peek_feature_dim(manifest: features.DatasetManifest) -> int:
    """Read d from the first feature file's header without loading payloads."""
    if not manifest.records:
        raise ValidationError("manifest has no records")
    path = manifest.resolve(manifest.records[0].feature_path)
    try:
        with open(path, "rb") as f:
            head = f.read(features.HEADER_BYTES)
    except OSError as e:
        raise FormatError(f"feature file missing: {path}: {e}") from e
    if len(head) < features.HEADER_BYTES:
        raise FormatError(f"{path}: shorter than header")
    magic, _, _, _, d = struct.unpack("<4sIIII", head)
    if magic != features.FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    return d


def _model_paths(args: argparse.Namespace) -> dict:
    base = args.model
    return {
        "gauss": base + ".vadg",
        "bank": base + ".vadb",
        "pq": base + ".vadq",
    }


def _load_train_grids(manifest_path: str) -> tuple[list[features.FeatureGrid], list[str]]:
    manifest = features.load_dataset(manifest_path)
    if manifest.split != "train":
        raise ValidationError(f"expected a train manifest, got split {manifest.split!r}")
    grids, ids = [], []
    for rec, grid in manifest.iter_grids():
        grids.append(grid)
        ids.append(rec.image_id)
    if not grids:
        raise ValidationError("train manifest has no records")
    return grids, ids


def cmd_fit(args: argparse.Namespace) -> int:
    _require(args, "method", "manifest", "model")
    paths = _model_paths(args)
    manifest = features.load_dataset(args.manifest)
    if manifest.split != "train":
        raise ValidationError(f"expected a train manifest, got split {manifest.split!r}")

    # fast-fail parameter validation before any feature payload is read
    if args.method == "patchcore-lite":
        d = _peek_feature_dim(manifest)
        if args.m < 1 or d % args.m != 0:
            raise ValidationError(f"m={args.m} does not divide feature dim d={d}")
        if not 1 <= args.b <= pq.MAX_BITS:
            raise ValidationError(f"b={args.b} out of range [1, {pq.MAX_BITS}]")
    if args.method in ("padim-full", "padim-lite") and args.epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {args.epsilon}")

    grids, ids = _load_train_grids(args.manifest)
    written = []

    if args.method == "padim-full":
        model = gaussian.fit_full(grids, regularizer=args.epsilon)
        gaussian.save_model(model, paths["gauss"])
        written.append(paths["gauss"])
    elif args.method == "padim-lite":
        model = gaussian.fit_diag(grids, epsilon=args.epsilon)
        gaussian.save_model(model, paths["gauss"])
        written.append(paths["gauss"])
    else:
        full_bank = bank.collect_patches(grids, image_ids=ids)
        size = min(args.coreset_size, full_bank.size)
        selected = bank.coreset_select(full_bank, bank.CoresetConfig(target_size=size, seed=args.seed))
        bank.save_bank(selected, paths["bank"])
        written.append(paths["bank"])
        if args.method == "patchcore-lite":
            cb = pq.compress_bank(selected, m=args.m, b=args.b, seed=args.seed)
            pq.save_compressed_bank(cb, paths["pq"])
            written.append(paths["pq"])
            rep = pq.storage_report(cb)
            print(f"index_bytes\t{rep.index_bytes}\t({_kb(rep.index_bytes)})")
            print(f"codebook_bytes\t{rep.codebook_bytes}\t({_kb(rep.codebook_bytes)})")
            print(f"total_bytes\t{rep.total_bytes}\t({_kb(rep.total_bytes)})")
            print(f"raw_bytes\t{rep.raw_bytes}\t({_kb(rep.raw_bytes)})")
            print(f"compression_ratio\t{rep.ratio:.2f}")

    for fp in evaluate.footprint(written):
        print(
            f"artifact\t{fp.path}\tactual={fp.actual_bytes}"
            f"\tanalytic={fp.analytic_value_bytes}\theader={fp.header_overhead_bytes}"
        )
    return 0


def _load_scorer(args: argparse.Namespace):
    """Returns (score_image, model_artifact_paths) for the configured method."""
    paths = _model_paths(args)
    if args.method in ("padim-full", "padim-lite"):
        model = gaussian.load_model(paths["gauss"])
        expected_kind = gaussian.DiagGaussianGrid if args.method == "padim-lite" else gaussian.FullGaussianGrid
        if not isinstance(model, expected_kind):
            raise ValidationError(f"model at {paths['gauss']} does not match method {args.method}")

        def score_image(patches: np.ndarray) -> np.ndarray:
            return gaussian.score_grid(features.FeatureGrid(patches), model)

        return score_image, [paths["gauss"]]
    if args.method == "patchcore-exhaustive":
        mem = bank.load_bank(paths["bank"])

        def score_image(patches: np.ndarray) -> np.ndarray:
            h, w, d = patches.shape
            out = np.empty((h, w))
            for n, x in enumerate(patches.reshape(-1, d)):
                out[n // w, n % w] = bank.exhaustive_nn_score(x, mem)[0]
            return out

        return score_image, [paths["bank"]]
    if args.method == "patchcore-lite":
        cbank = pq.load_compressed_bank(paths["pq"])
        config = search.SearchConfig(k=args.k, mode=args.mode)
        config.validate(cbank.size)

        def score_image(patches: np.ndarray) -> np.ndarray:
            return search.score_grid_pq(patches, cbank, config)

        artifacts = [paths["pq"]]
        if os.path.exists(paths["bank"]):
            artifacts.append(paths["bank"])
        return score_image, artifacts
    raise ValidationError(f"unknown method {args.method!r}")


def cmd_score(args: argparse.Namespace) -> int:
    _require(args, "method", "model", "features", "out")
    score_image, _ = _load_scorer(args)
    grid = features.read_feature_file(args.features)
    patch_scores = score_image(grid.patches)

    target_h = int(args.pixel_h) if args.pixel_h else grid.height * 8
    target_w = int(args.pixel_w) if args.pixel_w else grid.width * 8
    smap = anomaly_map.build_score_map(patch_scores, target_h, target_w, sigma=args.sigma)

    os.makedirs(args.out, exist_ok=True)
    features.write_feature_file(
        features.FeatureGrid(patch_scores[..., None].astype(np.float32)),
        os.path.join(args.out, "patch_scores.vadf"),
    )
    features.write_feature_file(
        features.FeatureGrid(smap.pixel_map[..., None].astype(np.float32)),
        os.path.join(args.out, "pixel_map.vadf"),
    )
    anomaly_map.write_pgm(smap.pixel_map, os.path.join(args.out, "pixel_map.pgm"))
    with open(os.path.join(args.out, "image_score.txt"), "w", encoding="utf-8") as f:
        f.write(f"{smap.image_score!r}\n")
    print(f"image_score\t{smap.image_score!r}")
    return 0


def _score_test_set(args: argparse.Namespace):
    manifest = features.load_dataset(args.manifest)
    if manifest.split != "test":
        raise ValidationError(f"expected a test manifest, got split {manifest.split!r}")
    score_image, artifacts = _load_scorer(args)
    image_scores, labels, pixel_maps, masks = [], [], [], []
    for rec, grid in manifest.iter_grids():
        patch_scores = score_image(grid.patches)
        image_scores.append(anomaly_map.image_score(patch_scores))
        labels.append(rec.label)
        pixel = anomaly_map.smooth(
            anomaly_map.upsample_scores(patch_scores, rec.height, rec.width), args.sigma
        )
        pixel_maps.append(pixel)
        if rec.label == "anomalous":
            masks.append(features.load_mask(manifest, rec))
        else:
            masks.append(np.zeros((rec.height, rec.width), dtype=bool))
    return manifest, score_image, artifacts, image_scores, labels, pixel_maps, masks


def cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "method", "manifest", "model", "out")
    _, _, _, image_scores, labels, pixel_maps, masks = _score_test_set(args)
    i_roc = evaluate.auroc(image_scores, labels)
    p_roc = evaluate.pixel_auroc(pixel_maps, masks)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "eval_report.txt")
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(f"method\t{args.method}\n")
        f.write(f"images\t{len(image_scores)}\n")
        f.write(f"i_roc\t{i_roc:.6f}\n")
        f.write(f"p_roc\t{p_roc:.6f}\n")
    print(f"i_roc\t{i_roc:.6f}")
    print(f"p_roc\t{p_roc:.6f}")
    return 0


def _peak_transient_estimate(args: argparse.Namespace, d: int, cbank=None) -> int:
    if args.method == "patchcore-lite" and cbank is not None:
        table = 8 * cbank.codebooks.m * cbank.codebooks.num_centroids
        approx = 8 * cbank.size
        candidates = 8 * args.k * d
        return table + approx + candidates
    if args.method == "patchcore-exhaustive":
        return 8 * d  # running difference buffer per bank row
    if args.method == "padim-full":
        return 8 * (d * d + d)
    return 8 * d


def cmd_bench(args: argparse.Namespace) -> int:
    _require(args, "method", "manifest", "model")
    manifest = features.load_dataset(args.manifest)
    if manifest.split != "test":
        raise ValidationError(f"expected a test manifest, got split {manifest.split!r}")
    score_image, artifacts = _load_scorer(args)
    patches = [grid.patches for _, grid in manifest.iter_grids()]
    report = evaluate.bench(args.method, score_image, patches, repetitions=args.reps)
    report.footprints = evaluate.footprint(artifacts)
    report.model_bytes = sum(fp.actual_bytes for fp in report.footprints)

    d = patches[0].shape[2]
    if args.method == "patchcore-lite":
        cbank = pq.load_compressed_bank(_model_paths(args)["pq"])
        counts = search.count_operations(cbank, search.SearchConfig(k=args.k, mode=args.mode))
        report.coarse_lookups = counts.coarse_lookups
        report.fine_mults = counts.fine_mults
        report.exhaustive_mults = counts.exhaustive_mults
        report.peak_transient_bytes = _peak_transient_estimate(args, d, cbank)
    elif args.method == "patchcore-exhaustive":
        mem = bank.load_bank(_model_paths(args)["bank"])
        report.exhaustive_mults = mem.size * d
        report.peak_transient_bytes = _peak_transient_estimate(args, d)
    else:
        report.per_patch_mults = d if args.method == "padim-lite" else d * d + d
        report.peak_transient_bytes = _peak_transient_estimate(args, d)

    out = report.to_kv()
    print(out, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench_report.txt"), "w", encoding="utf-8") as f:
            f.write(out)
    return 0


def cmd_footprint(args: argparse.Namespace) -> int:
    _require(args, "method", "model")
    paths = _model_paths(args)
    existing = [p for p in paths.values() if os.path.exists(p)]
    if not existing:
        raise FormatError(f"no model artifacts found at base path {args.model}")
    for fp in evaluate.footprint(existing):
        print(
            f"artifact\t{fp.path}\tactual={fp.actual_bytes}"
            f"\tanalytic={fp.analytic_value_bytes}\theader={fp.header_overhead_bytes}"
            f"\textra={fp.extra_bytes}"
        )
        if fp.extra_bytes < 0:
            raise FormatError(f"{fp.path}: actual size below analytic prediction")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vadlite", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p):
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--manifest")
        p.add_argument("--model", help="base path; artifacts get .vadg/.vadb/.vadq suffixes")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker cap (current implementations are single-threaded)")
        p.add_argument("--config", help="key=value config file; flags win")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--coreset-size", dest="coreset_size", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--b", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--mode", choices=(search.MODE_ADC, search.MODE_SDC))
        p.add_argument("--sigma", type=float)

    p_fit = sub.add_parser("fit", help="fit a model from a train manifest")
    add_shared(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_score = sub.add_parser("score", help="score one feature file")
    add_shared(p_score)
    p_score.add_argument("--features", help="VADF feature file to score")
    p_score.add_argument("--pixel-h", dest="pixel_h", type=int)
    p_score.add_argument("--pixel-w", dest="pixel_w", type=int)
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("eval", help="I-ROC / P-ROC over a test manifest")
    add_shared(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="timing, op counts, and footprint")
    add_shared(p_bench)
    p_bench.add_argument("--reps", type=int)
    p_bench.set_defaults(func=cmd_bench)

    p_fp = sub.add_parser("footprint", help="byte report for model artifacts")
    add_shared(p_fp)
    p_fp.set_defaults(func=cmd_footprint)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _resolve(args)
        return args.func(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
