"""Command-line interface: ``anomalyhop {train,predict,eval,search,info,synth}``.

Exit codes: 0 success, 1 unexpected error, 2 usage error, and one code per
failure class (see :mod:`anomalyhop.errors`).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import engine
from .anomaly import save_heatmap, save_overlay, segment
from .bundle import ModelBundle, load_bundle, read_header, save_bundle
from .config import ClassConfig, load_config
from .errors import AnomalyHopError, DatasetNotFoundError
from .evalx import ClassRow, Report, RocResult, evaluate_class, summarize
from .imageio import IMAGE_SUFFIXES, load_image, load_mvtec_class, save_png, write_synthetic_class
from .search import KEEP_RANGE, WINDOW_RANGE, run_search

log = logging.getLogger("anomalyhop")

TIMING_COLUMNS = ("image", "seconds")
LEADERBOARD_COLUMNS = ("rank", "auc", "hops", "model_kind", "weights", "train_seconds")


def _load_split(config: ClassConfig, data_root, threads: int = 1):
    return load_mvtec_class(data_root, config.class_name, config.resize, config.color_mode, threads)


def cmd_train(config_path, data_root, out_path, threads: int = 1, seed: int | None = None) -> ModelBundle:
    config, text = load_config(config_path)
    if seed is not None:
        config = replace(config, seed=seed)
    split = _load_split(config, data_root, threads)
    t0 = time.perf_counter()
    bundle = engine.train(config, [s.image for s in split.train], config_text=text, threads=threads)
    elapsed = time.perf_counter() - t0
    save_bundle(bundle, out_path)
    chans = [bundle.pipeline.out_channels(h) for h in range(1, bundle.pipeline.n_hops + 1)]
    print(f"trained {config.class_name}: {len(split.train)} images, channels per hop {chans}, "
          f"parameter_count={bundle.parameter_count}, {elapsed:.2f} s")
    return bundle


def _inputs(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DatasetNotFoundError(f"no PNG images under {path}")
        return files
    if not path.is_file():
        raise DatasetNotFoundError(f"no such image {path}")
    return [path]


def cmd_predict(bundle_path, image_path, out_dir, overlay: bool = False,
                threshold: float | None = None, threads: int = 1) -> list[tuple[str, float]]:
    bundle = load_bundle(bundle_path)
    cfg = bundle.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = _inputs(image_path)

    def run(p):
        img = load_image(p, cfg.resize, cfg.color_mode)
        return img, engine.predict(bundle, img)

    timings = []
    for p, (img, pred) in zip(files, engine.parallel_map(run, files, threads)):
        save_heatmap(pred.fused, out / f"{p.stem}_heatmap.png")
        if overlay:
            save_overlay(img, pred.fused, out / f"{p.stem}_overlay.png")
        if threshold is not None:
            save_png(segment(pred.fused, threshold), out / f"{p.stem}_segment.png")
        timings.append((p.name, pred.seconds))
    with open(out / "timing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        w.writerows((n, f"{s:.6f}") for n, s in timings)
    print(f"{len(timings)} images, mean {np.mean([s for _, s in timings]):.4f} s/image")
    return timings


def cmd_eval(bundle_path, data_root, out_csv=None, heatmaps=None, threads: int = 1) -> tuple[RocResult, Report]:
    bundle = load_bundle(bundle_path)
    cfg = bundle.config
    split = _load_split(cfg, data_root, threads)
    labeled = [s for s in split.test if s.mask is not None]
    preds = engine.parallel_map(lambda s: engine.predict(bundle, s.image), labeled, threads)
    result = evaluate_class((p.fused, s.mask) for p, s in zip(preds, labeled))
    if heatmaps:
        for s, p in zip(labeled, preds):
            name = f"{s.defect_name}_{Path(s.path).stem}"
            save_heatmap(p.fused, Path(heatmaps) / f"{name}_heatmap.png")
    spi = float(np.mean([p.seconds for p in preds]))
    report = summarize({cfg.class_name: result}, timings={cfg.class_name: (len(labeled), spi)})
    print(report.text)
    if out_csv:
        report.write_csv(out_csv, append=True)
    return result, report


def cmd_search(template_path, data_root, budget: int, select_on: str = "holdout", out_dir=None,
               threads: int = 1, seed: int | None = None):
    text = Path(template_path).read_text(encoding="utf-8")
    raw = yaml.safe_load(text) or {}
    opts = raw.get("search") or {}
    template = ClassConfig.from_dict(raw)
    if seed is not None:
        template = replace(template, seed=seed)
    split = _load_split(template, data_root, threads)
    rows = run_search(template, split, budget, select_on,
                      windows=opts.get("windows", WINDOW_RANGE), keeps=opts.get("keeps", KEEP_RANGE),
                      tune_weights=bool(opts.get("fusion_weights", False)), threads=threads)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "leaderboard.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(LEADERBOARD_COLUMNS)
            for i, r in enumerate(rows, start=1):
                weights = "" if r.config.weights is None else ";".join(f"{x:g}" for x in r.config.weights)
                kind = r.config.model_kind if isinstance(r.config.model_kind, str) else ";".join(r.config.model_kind)
                w.writerow([i, f"{r.auc:.6f}", r.hops_label, kind, weights, f"{r.train_seconds:.3f}"])
        if rows:
            (out / "best_config.yaml").write_text(rows[0].config.dumps(), encoding="utf-8")
    for i, r in enumerate(rows[:10], start=1):
        print(f"{i:3d}  auc={r.auc:.4f}  hops={r.hops_label}")
    return (rows[0].config if rows else None), rows


def cmd_info(bundle_path) -> dict:
    header, _ = read_header(Path(bundle_path).read_bytes())
    header = dict(header)
    header["arrays"] = [f"{a['name']} {a['shape']}" for a in header["arrays"]]
    for hop in header["pipeline"]["hops"]:
        hop["out_channels"] = len(hop.pop("keep_index"))
    print(json.dumps(header, indent=2, sort_keys=True))
    return header


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anomalyhop", description="Image anomaly localization with channel-wise Saab features.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    threads = dict(type=int, default=os.cpu_count() or 1, help="worker threads (1 for timing runs)")

    p = sub.add_parser("train", help="fit a bundle on a class's training images")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", **threads)

    p = sub.add_parser("predict", help="write heatmaps for an image or directory")
    p.add_argument("bundle")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--threshold", type=float, help="also write a binary segmentation")
    p.add_argument("--threads", **threads)

    p = sub.add_parser("eval", help="pixel-level ROC-AUC on the class test split")
    p.add_argument("bundle")
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", help="CSV file to append the result row to")
    p.add_argument("--heatmaps", help="directory for per-image heatmaps")
    p.add_argument("--threads", **threads)

    p = sub.add_parser("search", help="grid search over window sizes and filter counts")
    p.add_argument("--config", required=True, help="template config, optional 'search' section")
    p.add_argument("--data-root", required=True)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--select-on", choices=("test", "holdout"), default="holdout")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", **threads)

    p = sub.add_parser("info", help="print a bundle header")
    p.add_argument("bundle")

    p = sub.add_parser("synth", help="write a synthetic MVTec-layout class")
    p.add_argument("--out", required=True, help="dataset root")
    p.add_argument("--class-name", default="synthetic")
    p.add_argument("--kind", choices=("sinusoid", "checker", "noise"), default="sinusoid")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-test", type=int, default=10)
    p.add_argument("--rotate", action="store_true", help="random pattern angle per image")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cmd_train(args.config, args.data_root, args.out, args.threads, args.seed)
        elif args.command == "predict":
            cmd_predict(args.bundle, args.input, args.out, args.overlay, args.threshold, args.threads)
        elif args.command == "eval":
            cmd_eval(args.bundle, args.data_root, args.out, args.heatmaps, args.threads)
        elif args.command == "search":
            cmd_search(args.config, args.data_root, args.budget, args.select_on, args.out,
                       args.threads, args.seed)
        elif args.command == "info":
            cmd_info(args.bundle)
        elif args.command == "synth":
            base = write_synthetic_class(args.out, args.class_name, args.kind, n_train=args.n_train,
                                         n_test=args.n_test, size=args.size, seed=args.seed,
                                         random_angle=args.rotate)
            print(f"wrote {base}")
    except AnomalyHopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
