"""Config-driven experiment runner.

Subcommands:

  fetch <dataset>       download + checksum-verify (or --pin on first use)
  train <config.json>   pretrain per the config; writes the run directory
  probe <run_dir>       linear probe only, onto an existing checkpoint
  evaluate <run_dir>    full evaluation; writes report.json
  embed <job.json>      activation export + t-SNE to CSV
  report <run_dirs...>  consolidated accuracy table (text + CSV)

A completed run directory contains exactly four files: config.json (the
normalized config copy), checkpoint.ffck, metrics.jsonl (append-only records,
the only place timestamps live), and report.json. Identical config + seed
reproduce config.json, checkpoint.ffck, and report.json byte-for-byte when
run single-threaded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .analysis import Embedding2D, EmbeddingJob, emit_embedding_csv, export_activations, tsne
from .bp import BPNetwork
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigValidationError, ExperimentConfig
from .core import Rng
from .datasets import DATASET_NAMES, DatasetError, default_cache_dir, fetch_dataset, get_manifest, load_dataset, pin_manifest
from .evaluation import evaluate_network, prepare_datasets, pretrain_network
from .ff import DivergenceError

CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "checkpoint.ffck"
METRICS_FILE = "metrics.jsonl"
REPORT_FILE = "report.json"


class MetricsWriter:
    """Append-only JSONL metric log; one record per line."""

    def __init__(self, path: Path, run: str, fresh: bool = False):
        self.path = path
        self.run = run
        if fresh:
            path.write_text("")

    def write(self, phase: str, epoch: int, metric: str, value: float) -> None:
        record = {
            "run": self.run,
            "phase": phase,
            "epoch": epoch,
            "metric": metric,
            "value": float(value),
            "ts": datetime.now(timezone.utc).isoformat(),
        }
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def _load_config(path: Path, seed_override: int | None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path)
    if seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=seed_override)
    return cfg


def _run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / cfg.run_name


def _load_run(run_dir: Path) -> tuple[ExperimentConfig, object]:
    cfg_path = run_dir / CONFIG_FILE
    ckpt_path = run_dir / CHECKPOINT_FILE
    if not cfg_path.exists():
        raise ConfigValidationError(f"(run dir): {cfg_path} not found; run `train` first")
    if not ckpt_path.exists():
        raise ConfigValidationError(f"(run dir): {ckpt_path} not found; run `train` first")
    cfg = ExperimentConfig.load(cfg_path)
    net = load_checkpoint(ckpt_path)
    if isinstance(net, BPNetwork):
        net.normalize = cfg.bp_normalize
    return cfg, net


def _datasets_for(cfg: ExperimentConfig, cache_dir):
    train_ds = load_dataset(cfg.dataset, "train", cache_dir)
    test_ds = load_dataset(cfg.dataset, "test", cache_dir)
    return prepare_datasets(cfg, train_ds, test_ds)


def cmd_fetch(args) -> int:
    names = list(DATASET_NAMES) if args.dataset == "all" else [args.dataset]
    cache_dir = args.cache_dir or default_cache_dir()
    for name in names:
        if args.pin:
            manifest = pin_manifest(name, cache_dir)
            for url, digest in zip(manifest.urls, manifest.sha256):
                print(f"pinned {name}: {digest}  {url}")
            if not manifest.urls:
                print(f"{name}: nothing to download (local conversion required, see README)")
            continue
        manifest = get_manifest(name, cache_dir)
        if not manifest.urls:
            print(f"{name}: nothing to download (local conversion required, see README)")
            continue
        for path in fetch_dataset(manifest, cache_dir):
            print(f"verified {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(Path(args.config), args.seed)
    run_dir = _run_dir(cfg)
    ckpt_path = run_dir / CHECKPOINT_FILE
    if ckpt_path.exists() and not args.force:
        print(f"{run_dir} already contains a checkpoint; use --force to retrain", file=sys.stderr)
        return 2
    train_ds, _ = _datasets_for(cfg, args.cache_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / CONFIG_FILE)
    metrics = MetricsWriter(run_dir / METRICS_FILE, cfg.run_name, fresh=True)

    def on_epoch(record):
        epoch = record["epoch"]
        if "layer_losses" in record:
            for i, v in enumerate(record["layer_losses"]):
                metrics.write("pretrain", epoch, f"loss_layer{i}", v)
            shown = " ".join(f"{v:.4f}" for v in record["layer_losses"])
            print(f"epoch {epoch}: layer losses {shown}")
        else:
            metrics.write("pretrain", epoch, "loss", record["loss"])
            print(f"epoch {epoch}: loss {record['loss']:.4f}")

    net, _ = pretrain_network(cfg, train_ds, on_epoch)
    save_checkpoint(ckpt_path, net)
    print(f"checkpoint written to {ckpt_path}")
    return 0


def cmd_probe(args) -> int:
    from .evaluation import accuracy, extract_features, train_linear_probe
    from .tasks import task_spec

    run_dir = Path(args.run_dir)
    report_path = run_dir / REPORT_FILE
    if report_path.exists() and not args.force:
        print(f"{report_path} already exists; use --force or run `evaluate`", file=sys.stderr)
        return 2
    cfg, net = _load_run(run_dir)
    train_ds, test_ds = _datasets_for(cfg, args.cache_dir)
    task = task_spec(cfg.task, train_ds.num_classes)
    layer_set = cfg.eval_layer_set()
    kwargs = dict(layer_set=layer_set, label_mode=cfg.feature_label_mode, num_labels=task.num_labels)
    feats_train = extract_features(net, train_ds.flat(), **kwargs)
    feats_test = extract_features(net, test_ds.flat(), **kwargs)
    probe, curve = train_linear_probe(
        feats_train,
        train_ds.labels,
        epochs=cfg.probe_epochs,
        learning_rate=cfg.probe_lr,
        rng=Rng(cfg.seed).child("probe"),
        num_classes=train_ds.num_classes,
    )
    transfer = accuracy(probe.predict(feats_test), test_ds.labels)
    metrics = MetricsWriter(run_dir / METRICS_FILE, cfg.run_name)
    for e, v in enumerate(curve):
        metrics.write("probe", e, "probe_accuracy", v)
    metrics.write("probe", cfg.probe_epochs, "transfer_accuracy", transfer)
    from .evaluation import EvalReport

    report = EvalReport(
        dataset=cfg.dataset,
        task=cfg.task,
        trainer=cfg.trainer,
        seed=cfg.seed,
        transfer_accuracy=transfer,
        curves=[{"epoch": e, "split": "train", "metric": "probe_accuracy", "value": v} for e, v in enumerate(curve)],
    )
    report.save(report_path)
    print(f"transfer accuracy {transfer:.4f}; report written to {report_path}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = run_dir / REPORT_FILE
    if report_path.exists() and not args.force:
        print(f"{report_path} already exists; use --force to re-evaluate", file=sys.stderr)
        return 2
    cfg, net = _load_run(run_dir)
    train_ds, test_ds = _datasets_for(cfg, args.cache_dir)
    report = evaluate_network(cfg, net, train_ds, test_ds)
    report.save(report_path)
    metrics = MetricsWriter(run_dir / METRICS_FILE, cfg.run_name)
    for name in ("task_accuracy_slow", "task_accuracy_fast", "transfer_accuracy"):
        value = getattr(report, name)
        if value is not None:
            metrics.write("evaluate", cfg.epochs, name, value)
    if report.per_layer_accuracy:
        for i, v in enumerate(report.per_layer_accuracy):
            metrics.write("evaluate", cfg.epochs, f"layer{i}_accuracy", v)
    shown = {
        k: round(v, 4)
        for k, v in report.to_dict().items()
        if k.endswith("accuracy") and isinstance(v, float)
    }
    print(f"report written to {report_path}: {shown}")
    return 0


def cmd_embed(args) -> int:
    job = EmbeddingJob.load(Path(args.job))
    out_path = Path(job.output)
    if out_path.exists() and not args.force:
        print(f"{out_path} already exists; use --force to overwrite", file=sys.stderr)
        return 2
    net = load_checkpoint(job.checkpoint)
    ds = load_dataset(job.dataset, job.split, args.cache_dir)
    rng = Rng(job.seed)
    features, labels, activity = export_activations(
        net, ds, job.layer_set, job.label_mode, job.cap, rng.child("subsample")
    )
    coords, kl_history = tsne(features, job.perplexity, job.iterations, rng.child("tsne"))
    emit_embedding_csv(Embedding2D(coords, labels, activity), out_path)
    print(f"{out_path}: {len(labels)} points, final KL {kl_history[-1]:.6f}")
    return 0


REPORT_METRICS = ("task_accuracy_slow", "task_accuracy_fast", "transfer_accuracy")


def cmd_report(args) -> int:
    reports = []
    gaps = []
    for d in args.run_dirs:
        path = Path(d) / REPORT_FILE
        if not path.exists():
            gaps.append(str(d))
            continue
        from .evaluation import EvalReport

        reports.append(EvalReport.load(path))
    datasets = sorted({r.dataset for r in reports})
    cells: dict[tuple[str, str, str], dict[str, float]] = {}
    for r in reports:
        key = (r.task, r.trainer)
        for metric in REPORT_METRICS:
            value = getattr(r, metric)
            if value is not None:
                cells.setdefault(key + (metric,), {})[r.dataset] = value * 100.0

    header = ["task", "trainer", "metric"] + datasets
    rows = []
    for key in sorted(cells):
        row = list(key) + [f"{cells[key][ds]:.2f}" if ds in cells[key] else "" for ds in datasets]
        rows.append(row)

    csv_lines = [",".join(header)] + [",".join(row) for row in rows]
    Path(args.csv).write_text("\n".join(csv_lines) + "\n")

    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))] if rows else [len(h) for h in header]
    def fmt(row):
        return "  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip()

    print(fmt(header))
    print(fmt(["-" * w for w in widths]))
    for row in rows:
        print(fmt(row))
    for gap in gaps:
        print(f"gap: {gap} (no {REPORT_FILE})")
    print(f"CSV written to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffbench", description="Train and evaluate layer-local vs backprop networks on pretext tasks.")
    parser.add_argument("--cache-dir", default=None, help="dataset cache directory (env FFBENCH_CACHE)")
    parser.add_argument("--threads", type=int, default=1, help="BLAS thread count (applied at startup; 1 = deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and checksum-verify a dataset")
    p.add_argument("dataset", choices=list(DATASET_NAMES) + ["all"])
    p.add_argument("--pin", action="store_true", help="record checksums on first download (trust on first use)")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", help="pretrain a network from a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="train only the linear probe on an existing run")
    p.add_argument("run_dir")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("evaluate", help="full evaluation of an existing run")
    p.add_argument("run_dir")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="export activations and run t-SNE per a job file")
    p.add_argument("job")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", help="consolidate run reports into one table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--csv", default="report.csv", help="CSV output path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
