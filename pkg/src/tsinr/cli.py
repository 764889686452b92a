"""Command-line surface: synth, train, detect, eval, sweep, plot.

Exit codes are a stable contract: 0 success, 2 usage or configuration
problems (bad flags, malformed data, incompatible checkpoints), 3 numeric
failure during training. Timestamps appear only in run manifests so that
reports, scores, and checkpoints stay byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .datasets import SynthSpec, load_csv, synthesize, write_bundle
from .detection import (
    anomaly_score,
    default_gamma,
    evaluate,
    read_scores_csv,
    render_report,
    threshold_by_proportion,
    write_scores_csv,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    EncoderError,
    NumericError,
)
from .pipeline import TrainConfig, load_checkpoint, reconstruct, save_checkpoint, train

__all__ = ["main"]


# ------------------------------------------------------------- plumbing

def _config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config.to_mapping(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(out_dir: Path, command: str, *, config: TrainConfig | None = None,
                    inputs: dict | None = None, outputs: dict | None = None,
                    seed: int | None = None) -> None:
    manifest = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "inputs": inputs or {},
        "outputs": outputs or {},
    }
    if config is not None:
        manifest["config"] = config.to_mapping()
        manifest["config_hash"] = _config_hash(config)
        manifest["seed"] = config.seed
    if seed is not None:
        manifest["seed"] = seed
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config_file(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        mapping = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(mapping, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return TrainConfig.from_mapping(mapping)


def _build_config(args) -> TrainConfig:
    """Precedence: flags > config file > built-in defaults."""
    config = _load_config_file(getattr(args, "config", None))
    overrides = {
        "window": args.window,
        "patch": args.patch,
        "gamma": args.gamma,
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "groups": args.groups,
        "global_layers": args.global_layers,
        "group_layers": args.group_layers,
        "trend_degree": args.trend_degree,
        "encoder": args.encoder,
        "decomposition": False if args.no_decomposition else None,
        "group_based": False if args.no_group else None,
    }
    return config.with_overrides(overrides)


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file mirroring TrainConfig fields")
    sub.add_argument("--window", type=int)
    sub.add_argument("--patch", type=int)
    sub.add_argument("--gamma", type=float)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--groups", type=int)
    sub.add_argument("--global-layers", dest="global_layers", type=int)
    sub.add_argument("--group-layers", dest="group_layers", type=int)
    sub.add_argument("--trend-degree", dest="trend_degree", type=int)
    sub.add_argument("--no-decomposition", action="store_true")
    sub.add_argument("--no-group", action="store_true")
    sub.add_argument("--encoder", choices=["identity", "random", "external"])


def _dataset_name(args, *paths: str | None) -> str:
    if getattr(args, "name", None):
        return args.name
    for p in paths:
        if p:
            return Path(p).stem
    return "dataset"


def _resolve_gamma(flag_gamma, config_gamma, name: str) -> float:
    if flag_gamma is not None:
        return flag_gamma
    if config_gamma is not None:
        return config_gamma
    return default_gamma(name)


# ------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    spec = SynthSpec(
        kind=args.kind, channels=args.channels, train_len=args.train_len,
        test_len=args.test_len, period=args.period, amplitude=args.amplitude,
        slope=args.slope, noise_std=args.noise_std, count=args.count,
        segment_len=args.segment_len, magnitude=args.magnitude,
        seed=args.seed, name=args.name,
    )
    bundle = synthesize(spec)
    paths = write_bundle(bundle, args.out_dir)
    anomalies = int(bundle.test_labels.sum())
    print(f"wrote {len(paths)} files to {args.out_dir}")
    print(f"train {spec.train_len} points, test {spec.test_len} points, "
          f"{anomalies} anomalous ({100.0 * anomalies / spec.test_len:.2f}%)")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    bundle = load_csv(train_path=args.train, name=_dataset_name(args, args.train))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def log(stats):
        print(f"epoch {stats.epoch + 1}/{config.epochs} "
              f"loss {stats.mean_loss:.6f} ({stats.steps} steps)")

    model = train(bundle.train, config, log=log)

    ckpt_path = Path(args.checkpoint) if args.checkpoint else out_dir / "model.ckpt"
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt_path)
    metrics_path = out_dir / "metrics.csv"
    with metrics_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "mean_loss", "steps"])
        for stats in model.history:
            writer.writerow([stats.epoch, repr(stats.mean_loss), stats.steps])
    _write_manifest(out_dir, "train", config=config,
                    inputs={"train": str(args.train)},
                    outputs={"checkpoint": str(ckpt_path), "metrics": str(metrics_path)})
    print(f"checkpoint {ckpt_path}")
    print(f"final epoch loss {model.history[-1].mean_loss:.6f}")
    return 0


def cmd_detect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    name = _dataset_name(args, args.test)
    bundle = load_csv(test_path=args.test, labels_path=args.labels, name=name)
    gamma = _resolve_gamma(args.gamma, model.config.gamma, name)

    recon, target = reconstruct(model, bundle.test)
    scores = anomaly_score(target, recon)
    report = evaluate(scores, bundle.test_labels, gamma,
                      point_adjust_enabled=model.config.point_adjust,
                      vus_buffer=model.config.vus_buffer)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "scores.csv"
    write_scores_csv(scores_path, scores, report.labels, bundle.test_labels)
    report_text = render_report(report)
    report_path = out_dir / "report.txt"
    report_path.write_text(report_text)

    from .plotting import plot_scores, plot_series
    figures = {
        "series": plot_series(out_dir / "series.svg", bundle.test,
                              recon=model.target_stats.denormalize(recon),
                              truth=bundle.test_labels,
                              channel_names=bundle.channel_names, title=name),
        "scores": plot_scores(out_dir / "scores.svg", scores, delta=report.delta,
                              truth=bundle.test_labels, title=name),
    }
    _write_manifest(out_dir, "detect", config=model.config,
                    inputs={"checkpoint": str(args.checkpoint), "test": str(args.test),
                            "labels": str(args.labels) if args.labels else None},
                    outputs={"scores": str(scores_path), "report": str(report_path),
                             **figures})
    print(report_text, end="")
    return 0


def cmd_eval(args) -> int:
    scores, labels, truth = read_scores_csv(args.scores)
    if args.labels:
        from .datasets import load_labels
        truth = load_labels(args.labels)
        if truth.shape[0] != scores.shape[0]:
            raise DataError(
                f"label length {truth.shape[0]} does not match scores {scores.shape[0]}"
            )
    # default gamma reproduces the stored labeling fraction
    gamma = args.gamma if args.gamma is not None else max(100.0 * labels.mean(), 1e-9)
    report = evaluate(scores, truth, gamma,
                      point_adjust_enabled=not args.no_point_adjust)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_text = render_report(report)
    (out_dir / "report.txt").write_text(report_text)
    _write_manifest(out_dir, "eval",
                    inputs={"scores": str(args.scores),
                            "labels": str(args.labels) if args.labels else None},
                    outputs={"report": str(out_dir / "report.txt")})
    print(report_text, end="")
    return 0


def _parse_sweep_values(raw: str, integral: bool) -> list[float]:
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range syntax is start:stop:step, got {raw!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("sweep step must be positive")
        values = []
        k = 0
        while (value := start + k * step) <= stop + 1e-9:
            values.append(round(value, 12))
            k += 1
    else:
        values = [float(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"no sweep values in {raw!r}")
    if integral:
        bad = [v for v in values if v != int(v)]
        if bad:
            raise ConfigError(f"group_num sweep needs integers, got {bad}")
        return [int(v) for v in values]
    return values


def cmd_sweep(args) -> int:
    config = _build_config(args)
    values = _parse_sweep_values(args.values, integral=args.param == "group_num")
    name = _dataset_name(args, args.test, args.train)
    bundle = load_csv(train_path=args.train, test_path=args.test,
                      labels_path=args.labels, name=name)
    if bundle.test_labels is None:
        raise DataError("sweep needs --labels to compute precision/recall/f1")

    rows = []
    if args.param == "gamma":
        model = train(bundle.train, config)
        recon, target = reconstruct(model, bundle.test)
        scores = anomaly_score(target, recon)
        for value in values:
            report = evaluate(scores, bundle.test_labels, value,
                              point_adjust_enabled=config.point_adjust,
                              vus_buffer=config.vus_buffer)
            rows.append((value, report.headline))
    else:
        for value in values:
            trial = replace(config, groups=int(value))
            model = train(bundle.train, trial)
            recon, target = reconstruct(model, bundle.test)
            scores = anomaly_score(target, recon)
            gamma = _resolve_gamma(args.gamma, trial.gamma, name)
            report = evaluate(scores, bundle.test_labels, gamma,
                              point_adjust_enabled=trial.point_adjust,
                              vus_buffer=trial.vus_buffer)
            rows.append((value, report.headline))

    best_idx = max(range(len(rows)), key=lambda i: rows[i][1].f1)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([args.param, "precision", "recall", "f1", "best"])
        for i, (value, metrics) in enumerate(rows):
            writer.writerow([value, repr(metrics.precision), repr(metrics.recall),
                             repr(metrics.f1), "*" if i == best_idx else ""])

    print(f"{args.param:>10}  {'precision':>9}  {'recall':>9}  {'f1':>9}  best")
    for i, (value, metrics) in enumerate(rows):
        print(f"{value:>10}  {metrics.precision:>9.4f}  {metrics.recall:>9.4f}  "
              f"{metrics.f1:>9.4f}  {'*' if i == best_idx else ''}")
    print(f"best {args.param}: {rows[best_idx][0]} (f1 {rows[best_idx][1].f1:.4f})")
    _write_manifest(out_dir, "sweep", config=config,
                    inputs={"train": str(args.train), "test": str(args.test),
                            "labels": str(args.labels)},
                    outputs={"sweep": str(sweep_path)})
    return 0


def cmd_plot(args) -> int:
    from .datasets import load_labels, load_series_csv
    from .plotting import plot_scores, plot_series

    scores, _, truth = read_scores_csv(args.scores)
    if args.labels:
        truth = load_labels(args.labels)
    if truth is not None and truth.shape[0] != scores.shape[0]:
        raise DataError(
            f"label length {truth.shape[0]} does not match scores {scores.shape[0]}"
        )
    delta = None
    if args.gamma is not None:
        delta = threshold_by_proportion(scores, args.gamma)

    out_dir = Path(args.out_dir)
    outputs = {
        "scores": plot_scores(out_dir / "scores.svg", scores, delta=delta, truth=truth),
    }
    if args.test:
        series, names = load_series_csv(args.test)
        if series.shape[1] != scores.shape[0]:
            raise DataError(
                f"test length {series.shape[1]} does not match scores {scores.shape[0]}"
            )
        recon = None
        if args.recon:
            recon, _ = load_series_csv(args.recon)
            if recon.shape != series.shape:
                raise DataError(
                    f"recon shape {recon.shape} does not match test {series.shape}"
                )
        outputs["series"] = plot_series(out_dir / "series.svg", series, recon=recon,
                                        truth=truth, channel_names=names)
    _write_manifest(out_dir, "plot",
                    inputs={"scores": str(args.scores),
                            "test": str(args.test) if args.test else None},
                    outputs=outputs)
    for path in outputs.values():
        print(f"wrote {path}")
    return 0


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsinr",
        description="Time series anomaly detection via hypernetwork-emitted "
                    "implicit neural representations.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="generate a labeled synthetic bundle")
    synth.add_argument("--kind", default="global_point",
                       choices=["global_point", "contextual_point", "shapelet",
                                "seasonal", "trend"])
    synth.add_argument("--channels", type=int, default=1)
    synth.add_argument("--train-len", dest="train_len", type=int, default=2000)
    synth.add_argument("--test-len", dest="test_len", type=int, default=2000)
    synth.add_argument("--period", type=float, default=50.0)
    synth.add_argument("--amplitude", type=float, default=1.0)
    synth.add_argument("--slope", type=float, default=0.0)
    synth.add_argument("--noise-std", dest="noise_std", type=float, default=0.01)
    synth.add_argument("--count", type=int, default=10)
    synth.add_argument("--segment-len", dest="segment_len", type=int, default=20)
    synth.add_argument("--magnitude", type=float, default=None)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--name", default="synthetic")
    synth.add_argument("--out-dir", dest="out_dir", default=".")
    synth.set_defaults(func=cmd_synth)

    tr = subs.add_parser("train", help="fit a model and write a checkpoint")
    tr.add_argument("--train", required=True, help="training series CSV")
    tr.add_argument("--name")
    tr.add_argument("--checkpoint", help="checkpoint output path")
    tr.add_argument("--out-dir", dest="out_dir", default=".")
    _add_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    det = subs.add_parser("detect", help="score a test series with a checkpoint")
    det.add_argument("--checkpoint", required=True)
    det.add_argument("--test", required=True, help="test series CSV")
    det.add_argument("--labels", help="ground-truth labels CSV")
    det.add_argument("--gamma", type=float)
    det.add_argument("--name")
    det.add_argument("--out-dir", dest="out_dir", default=".")
    det.set_defaults(func=cmd_detect)

    ev = subs.add_parser("eval", help="recompute metrics from a scores CSV")
    ev.add_argument("--scores", required=True, help="scores CSV from detect")
    ev.add_argument("--labels", help="override truth labels CSV")
    ev.add_argument("--gamma", type=float)
    ev.add_argument("--no-point-adjust", dest="no_point_adjust", action="store_true")
    ev.add_argument("--out-dir", dest="out_dir", default=".")
    ev.set_defaults(func=cmd_eval)

    sw = subs.add_parser("sweep", help="tabulate metrics across gamma or group count")
    sw.add_argument("--param", required=True, choices=["gamma", "group_num"])
    sw.add_argument("--values", required=True,
                    help="comma list (0.5,0.6) or range start:stop:step")
    sw.add_argument("--train", required=True)
    sw.add_argument("--test", required=True)
    sw.add_argument("--labels", required=True)
    sw.add_argument("--name")
    sw.add_argument("--out-dir", dest="out_dir", default=".")
    _add_train_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    pl = subs.add_parser("plot", help="render SVG figures from existing outputs")
    pl.add_argument("--scores", required=True, help="scores CSV from detect")
    pl.add_argument("--test", help="test series CSV for channel plots")
    pl.add_argument("--recon", help="reconstruction CSV to overlay")
    pl.add_argument("--labels", help="override truth labels CSV")
    pl.add_argument("--gamma", type=float, help="draw the threshold line at this gamma")
    pl.add_argument("--out-dir", dest="out_dir", default=".")
    pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, EncoderError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
