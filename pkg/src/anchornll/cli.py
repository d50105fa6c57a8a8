"""Command-line entry point: ``anchornll {generate,run,eval,sweep,export-embeddings}``."""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import data, hallucinator, nn, pipeline, selection
from .config import MODES, RunConfig, dump_config, load_config
from .errors import AnchorNLLError, UsageError

log = logging.getLogger("anchornll")

# short sweep names -> dotted config keys
SWEEP_KEYS = {
    "P": "selection.percent",
    "lam_p": "hallucinator.lam_p",
    "lam_conf": "correction.lam_conf",
    "K": "correction.K",
    "lambda_mse": "ssl.lambda_mse",
}


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    return cfg.replace(**changes) if changes else cfg


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args):
    cfg = _config(args)
    out = _out(args, "data")
    splits = pipeline.make_splits(cfg)
    for name in ("train", "val", "test"):
        ds = getattr(splits, name)
        data.save_dataset(out / f"{name}.npz", ds)
        if args.csv:
            data.export_csv(out / f"{name}.csv", ds)
    log.info("wrote train/val/test to %s (realised noise %.4f)", out, data.noise_rate(splits.train))
    return {"noise_rate": data.noise_rate(splits.train)}


def cmd_run(args):
    cfg = _config(args)
    out = _out(args, "runs/latest")
    res = pipeline.run_experiment(cfg, out, quiet=args.quiet)
    if not args.quiet:
        print(json.dumps(res.summary, sort_keys=True))
    return res.summary


def _checkpoint(args, out):
    path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.npz"
    if not path.exists():
        raise UsageError(f"no checkpoint at {path}")
    return nn.load_checkpoint(path)


def cmd_eval(args):
    cfg = _config(args)
    out = _out(args, "runs/latest")
    model, meta = _checkpoint(args, out)
    if args.data:
        ds = data.load_dataset(args.data)
    else:
        ds = getattr(pipeline.make_splits(cfg), args.split)
    if ds.split == "train":
        raise UsageError("evaluation needs a clean split (val or test)")
    acc = pipeline.evaluate(model, ds)
    result = {"split": ds.split, "accuracy": acc, "n": len(ds), "config_hash": meta.get("config_hash")}
    print(json.dumps(result, sort_keys=True))
    return result


def _parse_grid(items):
    grid = {}
    for item in items or []:
        key, _, values = item.partition("=")
        if key not in SWEEP_KEYS or not values:
            raise UsageError(f"bad --grid entry {item!r}; keys: {sorted(SWEEP_KEYS)}")
        grid[SWEEP_KEYS[key]] = [json.loads(v) for v in values.split(",")]
    return grid


def cmd_sweep(args):
    base = _config(args)
    out = _out(args, "runs/sweep")
    grid = _parse_grid(args.grid)
    keys = list(grid)
    rows = []
    with open(out / "sweep.jsonl", "w") as fh:
        for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
            changes = dict(zip(keys, combo))
            cfg = base.replace(**changes)
            res = pipeline.run_experiment(cfg, out / f"run_{i:03d}", quiet=True)
            row = {"run": i, **changes, **res.summary}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            rows.append(row)
            if not args.quiet:
                log.info("run %03d %s -> best test %.4f", i, changes, res.summary["best_test_acc"])
    return {"runs": len(rows)}


def cmd_export(args):
    cfg = _config(args)
    out = _out(args, "runs/latest")
    model, _ = _checkpoint(args, out)
    splits = pipeline.make_splits(cfg)
    ds = splits.train
    feats = model.features(ds.inputs)
    losses = nn.per_sample_cross_entropy(model.logits(ds.inputs), ds.noisy_labels)
    omega = selection.easiness_scores(selection.fit_gmm2(selection.normalize_losses(losses)))
    split = selection.class_balanced_split(ds.noisy_labels, omega, cfg.selection.percent, ds.num_classes)
    easy_mask = np.zeros(len(ds), dtype=bool)
    easy_mask[split.easy] = True
    np.savez(out / "embeddings.npz", features=feats, true_labels=ds.true_labels,
             noisy_labels=ds.noisy_labels, easiness=omega, easy_mask=easy_mask)
    easy = hallucinator.features_of(model, ds.inputs[split.easy], split.easy,
                                    ds.noisy_labels[split.easy], "easy")
    anchors = hallucinator.build_anchors(model.h, easy, cfg.hallucinator.anchors_per_sample,
                                         cfg.hallucinator.lam_p, np.random.default_rng([cfg.seed, 500]))
    hallucinator.save_anchors(out / "anchors.npz", anchors, easy)
    log.info("wrote %d features and %d anchors to %s", len(feats), len(anchors), out)
    return {"features": len(feats), "anchors": len(anchors)}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (keys mirror RunConfig)")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=MODES, help="ablation mode")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="anchornll", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesise train/val/test datasets")
    p.add_argument("--csv", action="store_true", help="also write CSV copies")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common], help="run one experiment")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a clean split")
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.npz)")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--data", help="dataset file instead of regenerating from config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="grid over P, lam_p, lam_conf, K, lambda_mse")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help=f"repeatable; KEY in {sorted(SWEEP_KEYS)}")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-embeddings", parents=[common], help="dump train features and anchors")
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.npz)")
    p.set_defaults(func=cmd_export)
    return parser


def _failure(args, exc):
    record = {
        "command": args.command,
        "kind": getattr(exc, "kind", "internal"),
        "type": type(exc).__name__,
        "message": str(exc),
    }
    if not isinstance(exc, AnchorNLLError):
        record["traceback"] = traceback.format_exc()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "failure.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
    print(json.dumps({k: v for k, v in record.items() if k != "traceback"}), file=sys.stderr)
    return record


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        args.func(args)
    except AnchorNLLError as exc:
        _failure(args, exc)
        return 2 if exc.kind in ("config", "usage") else 1
    except Exception as exc:  # noqa: BLE001 - every failure gets a record
        _failure(args, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
