"""Command-line harness: ingest, split, inject, run, evaluate, score, theory-check.

Exit codes: 0 success, 1 unexpected failure, 3 configuration error, 4 data error,
5 numeric divergence.  Log verbosity comes from SDGAD_LOG_LEVEL (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .boundary import BatchLikelihoods
from .config import ConfigError, DataConfig, RunConfig, toy_config
from .encoder import EventBatcher
from .events import (
    EventStream,
    SplitError,
    SplitSpec,
    StreamFormatError,
    align_nodes,
    chronological_split,
    concat_streams,
    load_stream,
    save_node_map,
    save_stream,
    union_node_ids,
)
from .injection import InjectionError, InjectionPlan, apply_plan
from .metrics import MetricError, auroc, average_precision, f1_at_threshold, summarize
from .pipeline import prepare_data, run_once
from .restriction import HypersphereConfig
from .theory import proposition1_check, proposition2_check
from .toy import toy_stream
from .trainer import CheckpointError, DivergenceError, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 3, 4, 5
LOG_ENV = "SDGAD_LOG_LEVEL"

log = logging.getLogger("sdgad")

METRIC_FIELDS = ("auroc", "ap", "f1")


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _stats(stream: EventStream) -> dict:
    labeled = int((stream.labels >= 0).sum())
    return {
        "events": len(stream),
        "nodes": int(stream.num_nodes),
        "labeled": labeled,
        "anomalies": int((stream.labels == 1).sum()),
        "anomaly_ratio": stream.anomaly_ratio,
    }


def load_data(cfg: DataConfig) -> EventStream:
    if cfg.source == "toy":
        return toy_stream(**{"feature_dim": cfg.feature_dim, **cfg.toy})
    return load_stream(cfg.path, cfg.format, cfg.feature_dim)


# ------------------------------------------------------------------ commands


def cmd_ingest(args) -> int:
    stream = load_stream(args.input, args.format, args.feature_dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_stream(stream, out / "stream.csv")
    save_node_map(stream, out / "node_map.csv")
    stats = _stats(stream)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_split(args) -> int:
    stream = load_stream(args.input, args.format, args.feature_dim)
    parts = chronological_split(stream, SplitSpec(args.train, args.val, args.test))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        save_stream(part, out / f"{name}.csv")
    save_node_map(stream, out / "node_map.csv")
    print(json.dumps({name: len(p) for name, p in zip(("train", "val", "test"), parts)}, sort_keys=True))
    return EXIT_OK


def _load_split_dir(path: Path, feature_dim: int) -> list[EventStream]:
    parts = [load_stream(path / f"{name}.csv", "csv", feature_dim) for name in ("train", "val", "test")]
    ids = union_node_ids(parts)
    return [align_nodes(p, ids) for p in parts]


def cmd_inject(args) -> int:
    parts = _load_split_dir(Path(args.split_dir), args.feature_dim)
    plan = InjectionPlan(args.train_rate_t, args.val_rate_t, args.test_rate_t, args.test_rate_s, args.seed)
    parts = apply_plan(*parts, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        save_stream(part, out / f"{name}.csv")
    full = concat_streams(parts)
    save_stream(full, out / "stream.csv")
    save_node_map(full, out / "node_map.csv")
    counts = {name: {k: int((p.kinds == k).sum()) for k in ("T", "S")} for name, p in zip(("train", "val", "test"), parts)}
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def run_experiment(cfg: RunConfig, out: Path) -> list[dict]:
    """Run all seeds of ``cfg`` into ``out``; each run is written as soon as it finishes."""
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    seeds = cfg.seeds()
    (out / "seeds.json").write_text(json.dumps(seeds) + "\n")

    stream = load_data(cfg.data)
    data = prepare_data(stream, cfg.split, cfg.injection, cfg.model.history)
    save_stream(data.stream, out / "stream.csv")
    save_node_map(data.stream, out / "node_map.csv")
    split_sizes = [len(data.train_idx), len(data.val_idx), len(data.test_idx)]

    rows: list[dict] = []
    for i, seed in enumerate(seeds):
        log.info("run %d/%d seed=%d", i + 1, len(seeds), seed)
        run_dir = out / f"run_{i:02d}"
        run_dir.mkdir(exist_ok=True)
        res = run_once(data, seed, cfg.model, replace(cfg.training, seed=seed), cfg.sphere, cfg.boundary)
        tr = res.train_result
        save_checkpoint(run_dir / "checkpoint.npz", res.model, cfg.to_dict() | {"run_seed": seed, "splits": split_sizes},
                        tr.best_metric, tr.best_epoch, node_ids=data.stream.node_ids)
        _write_csv(run_dir / "scores.csv", ["event_id", "timestamp", "score", "label"],
                   [[int(e), _fmt(t), _fmt(s), int(y)] for e, t, s, y in
                    zip(res.test_event_ids, res.test_ts, res.test_scores, res.test_labels)])
        _write_csv(run_dir / "epochs.csv", ["epoch", "ml", "bo", "rr", "total", "val_metric", "val_metric_name"],
                   [[h.epoch, _fmt(h.ml), _fmt(h.bo), _fmt(h.rr), _fmt(h.total), _fmt(h.val_metric),
                     h.val_metric_name] for h in tr.history])
        rows.append({"run": i, "seed": seed, "auroc": res.auroc, "ap": res.ap, "f1": res.f1,
                     "threshold": res.threshold, "b_n": res.model.b_n, "b_a": res.model.b_a,
                     "best_epoch": tr.best_epoch, "epochs": len(tr.history)})
        _write_csv(out / "runs.csv", list(rows[0]), [[_fmt(v) if isinstance(v, float) else v for v in r.values()]
                                                      for r in rows])
    summary = []
    for name in METRIC_FIELDS:
        mean, std = summarize([r[name] for r in rows])
        summary.append([name, _fmt(mean), _fmt(std), len(rows)])
    _write_csv(out / "metrics.csv", ["metric", "mean", "std", "runs"], summary)
    return rows


def cmd_run(args) -> int:
    if args.toy:
        cfg = toy_config()
    elif args.config:
        cfg = RunConfig.load(args.config)
    else:
        raise ConfigError("run needs --config or --toy")
    if args.seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
    if args.num_runs is not None:
        try:
            cfg = replace(cfg, training=replace(cfg.training, num_runs=args.num_runs))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    out = Path(cfg.output_dir)
    rows = run_experiment(cfg, out)
    for r in rows:
        print(f"run {r['run']} seed={r['seed']} auroc={r['auroc']:.4f} ap={r['ap']:.4f} f1={r['f1']:.4f}")
    print(f"results in {out}")
    return EXIT_OK


def _read_scores(path) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"score", "label"} <= set(reader.fieldnames):
            raise StreamFormatError(f"{path}: expected columns score,label")
        for lineno, row in enumerate(reader, start=2):
            try:
                scores.append(float(row["score"]))
                labels.append(int(row["label"]))
            except (TypeError, ValueError):
                raise StreamFormatError(f"{path}:{lineno}: bad score or label") from None
    return np.asarray(scores), np.asarray(labels)


def cmd_evaluate(args) -> int:
    scores, labels = _read_scores(args.scores)
    result = {
        "auroc": auroc(scores, labels),
        "ap": average_precision(scores, labels),
        "f1": f1_at_threshold(scores, labels, args.threshold),
        "threshold": args.threshold,
        "events": int(len(scores)),
        "anomalies": int(labels.sum()),
    }
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _checkpoint_stream(args):
    model, meta = load_checkpoint(args.checkpoint)
    stream = load_stream(args.stream, args.format, meta["feature_dim"])
    if meta.get("node_ids"):
        stream = align_nodes(stream, meta["node_ids"])
    elif stream.num_nodes > meta["num_nodes"] and meta["model"]["encoder"] == "reference":
        raise StreamFormatError("stream has more nodes than the checkpoint's embedding table")
    start = args.start or 0
    stop = len(stream) if args.stop is None else args.stop
    if not 0 <= start < stop <= len(stream):
        raise StreamFormatError(f"event range [{start}, {stop}) is outside the stream of {len(stream)} events")
    return model, meta, stream, np.arange(start, stop)


def cmd_score(args) -> int:
    model, meta, stream, idx = _checkpoint_stream(args)
    batcher = EventBatcher(stream, model.cfg.history)
    _, scores = model.score(batcher, idx)
    labels = np.maximum(stream.labels[idx], 0)
    _write_csv(args.out, ["event_id", "timestamp", "score", "label"],
               [[int(e), _fmt(stream.ts[e]), _fmt(s), int(y)] for e, s, y in zip(idx, scores, labels)])
    print(f"wrote {len(idx)} scores to {args.out}")
    return EXIT_OK


def cmd_theory_check(args) -> int:
    model, meta, stream, idx = _checkpoint_stream(args)
    if model.b_n is None:
        raise CheckpointError(f"{args.checkpoint}: checkpoint has no boundaries")
    cfg = meta.get("config", {})
    lambda1 = float(cfg.get("training", {}).get("lambda1", 1.0))
    sphere = HypersphereConfig(**cfg["sphere"]) if "sphere" in cfg else HypersphereConfig()
    batcher = EventBatcher(stream, model.cfg.history)
    x, _, ll = model.forward(batcher, idx)
    ll = ll.data
    labels = stream.labels[idx]
    batch = BatchLikelihoods(ll[labels != 1], ll[labels == 1], model.b_n, model.b_a)
    eps = args.eps if args.eps is not None else 0.5 * (model.b_n - model.b_a)
    reports = []
    if lambda1 > 0:
        reports.append(proposition1_check(batch, model.cfg.d_proj, lambda1, eps).to_dict())
    else:
        reports.append({"name": "proposition1", "skipped": "lambda1 is 0"})
    reports.append(proposition2_check(x.data, labels, sphere).to_dict())
    lines = [json.dumps(r, sort_keys=True, default=float) for r in reports]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_init_config(args) -> int:
    cfg = toy_config() if args.toy else RunConfig(DataConfig("file", "events.csv"))
    cfg.save(args.path)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdgad", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def stream_args(sp):
        sp.add_argument("--format", choices=("csv", "jsonl"), default=None)
        sp.add_argument("--feature-dim", type=int, default=0)

    sp = sub.add_parser("ingest", help="validate an event file and write a normalized copy")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    stream_args(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("split", help="chronological train/val/test split")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--train", type=float, default=0.4)
    sp.add_argument("--val", type=float, default=0.2)
    sp.add_argument("--test", type=float, default=0.4)
    stream_args(sp)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("inject", help="inject T/S anomalies into a split directory")
    sp.add_argument("split_dir")
    sp.add_argument("--out", required=True)
    sp.add_argument("--train-rate-t", type=float, default=0.001)
    sp.add_argument("--val-rate-t", type=float, default=0.001)
    sp.add_argument("--test-rate-t", type=float, default=0.0005)
    sp.add_argument("--test-rate-s", type=float, default=0.0005)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--feature-dim", type=int, default=0)
    sp.set_defaults(func=cmd_inject)

    sp = sub.add_parser("run", help="train and evaluate num_runs seeds from a config")
    sp.add_argument("--config")
    sp.add_argument("--toy", action="store_true", help="use the built-in toy experiment config")
    sp.add_argument("--seed", type=int, default=None, help="base seed; run i uses seed + i")
    sp.add_argument("--num-runs", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("evaluate", help="AUROC, AP and F1 of a score CSV")
    sp.add_argument("scores")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_evaluate)

    for name, func, helptext in (("score", cmd_score, "score events with a checkpoint"),
                                 ("theory-check", cmd_theory_check, "check both error bounds on a checkpoint")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--stream", required=True, help="full event stream the checkpoint was trained on")
        sp.add_argument("--start", type=int, default=None, help="first event index to use")
        sp.add_argument("--stop", type=int, default=None, help="one past the last event index")
        sp.add_argument("--format", choices=("csv", "jsonl"), default=None)
        if name == "score":
            sp.add_argument("--out", required=True)
        else:
            sp.add_argument("--out", default=None)
            sp.add_argument("--eps", type=float, default=None, help="margin, default tau / 2")
        sp.set_defaults(func=func)

    sp = sub.add_parser("init-config", help="write a config file with all defaults")
    sp.add_argument("path")
    sp.add_argument("--toy", action="store_true")
    sp.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InjectionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamFormatError, SplitError, CheckpointError, MetricError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
