"""Command-line interface.

Subcommands: scan, synth, split, train, eval, bench, sweep-m, report. Every
subcommand accepts --config (JSON with "model"/"train"/"split" sections) and
--seed; all randomness flows from the seed. Exit codes: 0 success, 1 domain
error, 2 usage error. Progress goes to stderr, results to stdout. The
SHUFFLE_HISTO_DATA environment variable supplies the default dataset root.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .data import (
    MAGNIFICATIONS,
    SplitSpec,
    make_splits,
    read_split_file,
    scan_dataset,
    synth_dataset,
    write_split_files,
)
from .errors import ConfigError, ShuffleHistoError
from .metrics import LatencyReport, MetricsReport, benchmark_latency
from .model import ModelConfig, build_model, load_checkpoint
from .report import (
    emit_comparison_table,
    emit_magnification_table,
    load_comparison_baselines,
    plot_metric_bars,
    plot_training_curves,
    rows_from_reports,
)
from .training import TrainConfig, run_training, sweep_m

ENV_DATA_ROOT = "SHUFFLE_HISTO_DATA"


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve_root(args) -> Path:
    root = getattr(args, "root", None) or os.environ.get(ENV_DATA_ROOT)
    if not root:
        raise ConfigError(
            f"no dataset root: pass --root or set {ENV_DATA_ROOT}"
        )
    return Path(root)


def _model_config(args, cfg: dict) -> ModelConfig:
    model_cfg = ModelConfig.from_dict(cfg.get("model", {}))
    overrides = {}
    for flag, field in (
        ("backbone", "backbone_name"),
        ("weights", "backbone_weights"),
        ("stride", "truncate_at_stride"),
        ("m", "m"),
        ("stages", "num_rdab_stages"),
        ("stem_channels", "stem_channels"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    return dataclasses.replace(model_cfg, **overrides) if overrides else model_cfg


def _train_config(args, cfg: dict) -> TrainConfig:
    train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    overrides = {}
    for flag, field in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("magnification", "magnification"),
        ("augment", "augment"),
    ):
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            overrides[field] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return dataclasses.replace(train_cfg, **overrides) if overrides else train_cfg


def _split_spec(args, cfg: dict) -> SplitSpec:
    base = cfg.get("split", {})
    known = {"ratios", "group_by_patient", "seed"}
    unknown = set(base) - known
    if unknown:
        raise ConfigError(f"unknown split config keys: {sorted(unknown)}")
    kwargs = dict(base)
    if "ratios" in kwargs:
        kwargs["ratios"] = tuple(kwargs["ratios"])
    if getattr(args, "ratios", None):
        parts = [float(x) for x in args.ratios.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"--ratios needs three comma-separated values, got {args.ratios!r}")
        kwargs["ratios"] = tuple(parts)
    if getattr(args, "by_image", False):
        kwargs["group_by_patient"] = False
    if args.seed is not None:
        kwargs["seed"] = args.seed
    return SplitSpec(**kwargs)


def _records_for_eval(args, root: Path):
    manifest = scan_dataset(root)
    if getattr(args, "split_file", None):
        records = read_split_file(args.split_file, manifest)
    else:
        records = list(manifest.records)
    if getattr(args, "magnification", None) is not None:
        records = [r for r in records if r.magnification == args.magnification]
        if not records:
            raise ConfigError(f"no records at magnification {args.magnification}")
    return records


def _print_metrics(report: MetricsReport, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(report.to_dict(), indent=2))
        return
    pairs = [
        ("accuracy", report.accuracy),
        ("precision", report.precision),
        ("recall", report.recall),
        ("f1", report.f1),
    ]
    if fmt == "csv":
        print("metric,value")
        for name, value in pairs:
            print(f"{name},{value:.2f}")
        return
    mag = f"{report.magnification}x" if report.magnification else "all"
    print(f"magnification {mag}")
    for name, value in pairs:
        print(f"{name:<10} {value:.2f}")
    c = report.counts
    print(f"counts     tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}")
    if report.degenerate:
        print(f"degenerate {', '.join(report.degenerate)}")


def _print_latency(report: LatencyReport, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(report.to_dict(), indent=2))
        return
    if fmt == "csv":
        print("field,value")
        for key, value in report.to_dict().items():
            print(f"{key},{value}")
        return
    print(
        f"per-image {report.per_image_ms:.2f} ms (iqr {report.iqr_ms:.2f}) "
        f"batch {report.batch_size} over {report.n_timed} passes on {report.device_label}"
    )


def cmd_scan(args) -> int:
    root = _resolve_root(args)
    manifest = scan_dataset(root)
    if args.save_manifest:
        manifest.save_csv(args.save_manifest)
        _progress(f"manifest written to {args.save_manifest}")
    counts = manifest.counts
    mags = sorted({mag for mag, _ in counts})
    print(f"{'magnification':<14} {'benign':>7} {'malignant':>10} {'total':>7}")
    total_b = total_m = 0
    for mag in mags:
        b = counts.get((mag, "benign"), 0)
        m = counts.get((mag, "malignant"), 0)
        total_b += b
        total_m += m
        print(f"{str(mag) + 'x':<14} {b:>7} {m:>10} {b + m:>7}")
    print(f"total {total_b} {total_m} {total_b + total_m}")
    return 0


def cmd_synth(args) -> int:
    if not args.out:
        raise ConfigError("synth requires --out")
    mags = (
        tuple(int(x) for x in args.magnifications.split(","))
        if args.magnifications
        else MAGNIFICATIONS
    )
    seed = args.seed if args.seed is not None else 0
    root = synth_dataset(
        args.out,
        n_per_class=args.n_per_class,
        magnifications=mags,
        seed=seed,
        image_size=args.image_size,
    )
    print(f"wrote {scan_dataset(root).count()} images to {args.out}")
    return 0


def cmd_split(args) -> int:
    root = _resolve_root(args)
    cfg = _load_config(args.config)
    manifest = scan_dataset(root)
    spec = _split_spec(args, cfg)
    train, val, test = make_splits(manifest, spec, magnification=args.magnification)
    out_dir = Path(args.out) if args.out else root
    write_split_files(out_dir, train, val, test)
    print(f"train {len(train)} val {len(val)} test {len(test)} -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    root = _resolve_root(args)
    cfg = _load_config(args.config)
    model_cfg = _model_config(args, cfg)
    train_cfg = _train_config(args, cfg)
    manifest = scan_dataset(root)
    spec = _split_spec(args, cfg)
    train_recs, val_recs, test_recs = make_splits(
        manifest, spec, magnification=train_cfg.magnification
    )
    run_dir = Path(args.run_dir or f"runs/train-seed{train_cfg.seed}")
    _progress(
        f"training on {len(train_recs)} images "
        f"(val {len(val_recs)}, test {len(test_recs)}) -> {run_dir}"
    )
    state, checkpoint = run_training(
        run_dir, root, train_recs, val_recs, test_recs,
        model_cfg, train_cfg, log=_progress,
    )
    print(f"best val accuracy {state.best_val_accuracy:.2f}%")
    print(f"checkpoint {checkpoint}.weights")
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    from .training import evaluate

    root = _resolve_root(args)
    cfg = _load_config(args.config)
    expected = ModelConfig.from_dict(cfg["model"]) if "model" in cfg else None
    model = load_checkpoint(args.checkpoint, expected_config=expected)
    records = _records_for_eval(args, root)
    _progress(f"evaluating {len(records)} images")
    report = evaluate(
        model, records, magnification=args.magnification, root=root
    )
    _print_metrics(report, args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        _progress(f"report written to {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        input_size = model.config.input_size
    else:
        model_cfg = _model_config(args, cfg)
        model = build_model(model_cfg)
        input_size = model_cfg.input_size
    seed = args.seed if args.seed is not None else 0
    _progress(f"benchmarking ({args.n_warmup} warmup + {args.n_timed} timed passes)")
    report = benchmark_latency(
        model,
        input_size=input_size,
        batch_size=args.batch_size,
        n_warmup=args.n_warmup,
        n_timed=args.n_timed,
        seed=seed,
    )
    _print_latency(report, args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        _progress(f"latency report written to {args.out}")
    return 0


def cmd_sweep_m(args) -> int:
    root = _resolve_root(args)
    cfg = _load_config(args.config)
    model_cfg = _model_config(args, cfg)
    train_cfg = _train_config(args, cfg)
    candidates = [int(x) for x in args.candidates.split(",")]
    manifest = scan_dataset(root)
    spec = _split_spec(args, cfg)
    train_recs, val_recs, _ = make_splits(
        manifest, spec, magnification=train_cfg.magnification
    )
    chosen, accuracies = sweep_m(
        candidates, model_cfg, train_recs, val_recs, train_cfg,
        root=root, log=_progress,
    )
    for m in sorted(accuracies):
        print(f"m={m} val_accuracy={accuracies[m]:.2f}")
    print(f"chosen m={chosen}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    reports: dict[int, MetricsReport] = {}
    for path in sorted(run_dir.glob("eval_*x.json")):
        with open(path) as fh:
            rep = MetricsReport.from_dict(json.load(fh))
        if rep.magnification is not None:
            reports[rep.magnification] = rep
    latencies: dict[int, LatencyReport] = {}
    for path in sorted(run_dir.glob("bench_*x.json")):
        mag = int(path.stem.removeprefix("bench_").removesuffix("x"))
        with open(path) as fh:
            latencies[mag] = LatencyReport.from_dict(json.load(fh))

    ext = {"text": "txt", "csv": "csv", "json": "json"}[args.format]
    emitted = False
    if set(reports) >= set(MAGNIFICATIONS):
        table = emit_magnification_table(
            reports,
            latencies if set(latencies) >= set(MAGNIFICATIONS) else None,
            args.format,
        )
        if out_dir:
            (out_dir / f"magnification_table.{ext}").write_text(table)
        else:
            print(table, end="")
        emitted = True
    elif reports:
        _progress(
            f"magnification table skipped: have {sorted(reports)}, "
            f"need all of {list(MAGNIFICATIONS)}"
        )

    if reports:
        rows = load_comparison_baselines() + rows_from_reports(
            args.model_name, reports
        )
        table = emit_comparison_table(rows, args.format)
        if out_dir:
            (out_dir / f"comparison_table.{ext}").write_text(table)
        else:
            print(table, end="")
        emitted = True

    history = run_dir / "history.csv"
    if args.plots and out_dir:
        if reports:
            plot_metric_bars(reports, out_dir / "metric_bars.png")
            _progress(f"wrote {out_dir / 'metric_bars.png'}")
        if history.is_file():
            plot_training_curves(history, out_dir / "training_curves.png")
            _progress(f"wrote {out_dir / 'training_curves.png'}")
        emitted = True

    if not emitted:
        raise ConfigError(
            f"nothing to report in {run_dir}: no eval_*x.json artifacts"
            + ("" if history.is_file() else " and no history.csv")
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shuffle-histo",
        description="Hybrid shuffle-attention classifier for breast histopathology images.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with model/train/split sections")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("scan", parents=[common], help="tally a dataset directory")
    p.add_argument("--root", help=f"dataset root (default ${ENV_DATA_ROOT})")
    p.add_argument("--save-manifest", help="write the manifest CSV here")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-per-class", type=int, default=12)
    p.add_argument("--magnifications", help="comma-separated, default all four")
    p.add_argument("--image-size", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="write train/val/test split files")
    p.add_argument("--root", help=f"dataset root (default ${ENV_DATA_ROOT})")
    p.add_argument("--out", help="directory for split files (default root)")
    p.add_argument("--ratios", help="train,val,test e.g. 0.7,0.15,0.15")
    p.add_argument("--by-image", action="store_true", help="split records, not patients")
    p.add_argument("--magnification", type=int, choices=MAGNIFICATIONS)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--root", help=f"dataset root (default ${ENV_DATA_ROOT})")
    p.add_argument("--run-dir", help="artifact directory (default runs/train-seed<seed>)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--magnification", type=int, choices=MAGNIFICATIONS)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--ratios", help="train,val,test e.g. 0.7,0.15,0.15")
    p.add_argument("--by-image", action="store_true")
    p.add_argument("--backbone", help="backbone name, e.g. mobilenet_v1")
    p.add_argument("--weights", help="imagenet, random, or a state-dict path")
    p.add_argument("--stride", type=int, choices=(8, 16, 32))
    p.add_argument("--m", type=int, help="DRA units per residual block")
    p.add_argument("--stages", type=int, help="number of residual blocks")
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint base path (or .weights path)")
    p.add_argument("--root", help=f"dataset root (default ${ENV_DATA_ROOT})")
    p.add_argument("--split-file", help="evaluate only paths listed in this file")
    p.add_argument("--magnification", type=int, choices=MAGNIFICATIONS)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="measure inference latency")
    p.add_argument("--checkpoint", help="checkpoint base path (default: fresh model)")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--n-warmup", type=int, default=5)
    p.add_argument("--n-timed", type=int, default=30)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out", help="also write the latency JSON here")
    p.add_argument("--backbone")
    p.add_argument("--weights")
    p.add_argument("--stride", type=int, choices=(8, 16, 32))
    p.add_argument("--m", type=int)
    p.add_argument("--stages", type=int)
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-m", parents=[common], help="train once per m and compare")
    p.add_argument("--root", help=f"dataset root (default ${ENV_DATA_ROOT})")
    p.add_argument("--candidates", default="1,2,3", help="comma-separated m values")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--magnification", type=int, choices=MAGNIFICATIONS)
    p.add_argument("--ratios")
    p.add_argument("--by-image", action="store_true")
    p.add_argument("--backbone")
    p.add_argument("--weights")
    p.add_argument("--stride", type=int, choices=(8, 16, 32))
    p.add_argument("--stages", type=int)
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.set_defaults(func=cmd_sweep_m)

    p = sub.add_parser("report", parents=[common], help="emit tables/plots from run artifacts")
    p.add_argument("--run-dir", required=False, help="run directory with stored artifacts")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out", help="write tables/plots here instead of stdout")
    p.add_argument("--plots", action="store_true", help="emit PNG plots (needs --out)")
    p.add_argument("--model-name", dest="model_name", default="This model")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    if getattr(args, "command", None) == "report" and not args.run_dir:
        print("error: report requires --run-dir", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ShuffleHistoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
