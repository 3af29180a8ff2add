"""Command-line interface.

    relabel gen-synth --out DIR [--flip-rate 0.2 ...]
    relabel train     --manifest M --out DIR [--learn-labels on|off ...]
    relabel crossval  --manifest M --out DIR [--jobs N]
    relabel eval      --checkpoint RUN_DIR_OR_FILE --manifest M --out DIR
    relabel report    --initial A.rls --final B.rls --out DIR [--grouping gold|dominant]

Every option can also come from a flat JSON file given with ``--config``;
keys are the option names with underscores (``lr_meta``, ``max_epochs``).
Flags override the file. Unknown keys are rejected before any work starts.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import metalearn as ml
from .data import (Dataset, SynthSpec, apply_normalization, gen_synthetic, load_manifest,
                   save_manifest, stratified_split)
from .errors import InvalidArgument, NumericFailure, SchemaError
from .metrics import class_mean_weights, evaluate, label_update_matrix, report_serialize
from .model import load_checkpoint
from .numerics import Rng
from .trainer import (RENORM_CHOICES, RESAMPLE_CHOICES, TrainConfig, crossval, fit_and_evaluate,
                      predict_dataset, write_run_dir)

SUBCOMMANDS = ("gen-synth", "train", "crossval", "eval", "report")

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
SYNTH_KEYS = {f.name for f in fields(SynthSpec)} - {"seed"}
OTHER_KEYS = {
    "out", "jobs", "manifest", "resample", "test_fraction", "checkpoint", "initial", "final",
    "grouping", "class_names", "feature_format",
}
ALL_KEYS = TRAIN_KEYS | SYNTH_KEYS | OTHER_KEYS

DEFAULTS = {
    **asdict(TrainConfig()),
    **{k: v for k, v in asdict(SynthSpec()).items() if k != "seed"},
    "out": None, "jobs": 1, "manifest": None, "resample": "none", "test_fraction": 0.2,
    "checkpoint": None, "initial": None, "final": None, "grouping": "gold",
    "class_names": None, "feature_format": "csv",
}

REQUIRED = {
    "gen-synth": ("out",),
    "train": ("manifest", "out"),
    "crossval": ("manifest", "out"),
    "eval": ("checkpoint", "manifest", "out"),
    "report": ("initial", "final", "out"),
}


def _on_off(text):
    v = str(text).lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", type=Path, help="flat JSON config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path)
    g.add_argument("--jobs", type=int)

    train = argparse.ArgumentParser(add_help=False)
    t = train.add_argument_group("training")
    t.add_argument("--manifest", type=Path)
    t.add_argument("--learn-labels", type=_on_off, dest="learn_labels")
    t.add_argument("--learn-weights", type=_on_off, dest="learn_weights")
    t.add_argument("--pretrain-epochs", type=int, dest="pretrain_epochs")
    t.add_argument("--resample", choices=RESAMPLE_CHOICES)
    t.add_argument("--lr", type=float, dest="lr_theta")
    t.add_argument("--lr-meta", type=float, dest="lr_meta")
    t.add_argument("--patience", type=int)
    t.add_argument("--max-epochs", type=int, dest="max_epochs")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--dropout", type=float, dest="dropout_rate")
    t.add_argument("--hidden1", type=int)
    t.add_argument("--hidden2", type=int)
    t.add_argument("--val-fraction", type=float, dest="val_fraction")
    t.add_argument("--test-fraction", type=float, dest="test_fraction")
    t.add_argument("--renorm-granularity", choices=RENORM_CHOICES, dest="renorm_granularity")
    t.add_argument("--meta-dropout", type=_on_off, dest="meta_dropout")
    t.add_argument("--epsilon-w", type=float, dest="epsilon_w")

    parser = argparse.ArgumentParser(prog="relabel", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic noisy-label dataset")
    for name, typ in [("num-classes", int), ("num-samples", int), ("min-frames", int),
                      ("max-frames", int), ("feature-dim", int), ("separation", float),
                      ("within-std", float), ("flip-rate", float), ("num-speakers", int)]:
        p.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))
    p.add_argument("--proportions", type=_float_list)
    p.add_argument("--class-names", type=_str_list, dest="class_names")
    p.add_argument("--feature-format", choices=("csv", "bin"), dest="feature_format")

    sub.add_parser("train", parents=[common, train], help="alternating fit on a held-out split")
    sub.add_parser("crossval", parents=[common, train], help="leave-one-speaker-out cross-validation")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--manifest", type=Path)

    p = sub.add_parser("report", parents=[common], help="label-update matrix and mean weights")
    p.add_argument("--initial", type=Path)
    p.add_argument("--final", type=Path)
    p.add_argument("--grouping", choices=("gold", "dominant"))
    p.add_argument("--class-names", type=_str_list, dest="class_names")
    return parser


def resolve_config(args) -> dict:
    """defaults < config file < flags; validated before returning."""
    cfg = dict(DEFAULTS)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(data) - ALL_KEYS)
        if unknown:
            raise SchemaError(f"{args.config}: unknown keys {unknown}")
        cfg.update(data)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    for key in ("out", "manifest", "checkpoint", "initial", "final"):
        if cfg.get(key) is not None:
            cfg[key] = Path(cfg[key])
    missing = [k for k in REQUIRED[args.command] if cfg.get(k) is None]
    if missing:
        raise InvalidArgument(f"{args.command}: missing required option(s) {missing}")
    if int(cfg["jobs"]) < 1:
        raise InvalidArgument("jobs must be >= 1")
    if cfg["resample"] not in RESAMPLE_CHOICES:
        raise InvalidArgument(f"resample must be one of {RESAMPLE_CHOICES}")
    if not 0 < float(cfg["test_fraction"]) < 1:
        raise InvalidArgument("test_fraction must lie in (0, 1)")
    if cfg["grouping"] not in ("gold", "dominant"):
        raise InvalidArgument("grouping must be 'gold' or 'dominant'")
    train_config(cfg)
    if args.command == "gen-synth":
        synth_spec(cfg)
    return cfg


def train_config(cfg) -> TrainConfig:
    try:
        tc = TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS})
    except TypeError as exc:
        raise InvalidArgument(str(exc)) from exc
    return tc.validate()


def synth_spec(cfg) -> SynthSpec:
    spec = SynthSpec(**{k: cfg[k] for k in SYNTH_KEYS}, seed=cfg["seed"])
    spec.validate()
    names = cfg.get("class_names")
    if names is not None and len(names) != spec.num_classes:
        raise InvalidArgument("class_names must have one entry per class")
    return spec


# ---------------------------------------------------------------- commands

def cmd_gen_synth(cfg):
    spec = synth_spec(cfg)
    ds = gen_synthetic(spec, cfg.get("class_names"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ext = ".bin" if cfg["feature_format"] == "bin" else ".csv"
    save_manifest(ds, out / "manifest.tsv", ext=ext)
    counts = ds.class_counts()
    flips = int((ds.gold != ds.true).sum())
    print(f"wrote {len(ds)} utterances to {out / 'manifest.tsv'}")
    print("class counts: " + ", ".join(f"{n}={c}" for n, c in zip(ds.class_names, counts)))
    print(f"flipped labels: {flips}")
    return 0


def _load(cfg) -> Dataset:
    return load_manifest(cfg["manifest"])


def cmd_train(cfg):
    tc = train_config(cfg)
    ds = _load(cfg)
    root = Rng(tc.seed)
    keep, held = stratified_split(ds, float(cfg["test_fraction"]), root.split("test"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    result = fit_and_evaluate(ds.subset(keep), ds.subset(held), tc, root.split("train"),
                              cfg["resample"], snapshot_dir=out / "labels")
    write_run_dir(out, result, tc)
    rep = result.report
    print(f"rounds={len(result.history)} best_round={result.history.best_round} "
          f"test WA={rep.wa:.2f} UA={rep.ua:.2f}")
    return 0


def cmd_crossval(cfg):
    tc = train_config(cfg)
    ds = _load(cfg)
    results, pooled = crossval(ds, tc, jobs=int(cfg["jobs"]), resample_how=cfg["resample"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for k, res in enumerate(results):
        write_run_dir(out / f"fold_{k:02d}", res, tc)
        print(f"fold {k:02d}: WA={res.report.wa:.2f} UA={res.report.ua:.2f}")
    report_serialize(pooled, out / "pooled.json")
    print(f"pooled: WA={pooled.wa:.2f} UA={pooled.ua:.2f}")
    return 0


def cmd_eval(cfg):
    ckpt = Path(cfg["checkpoint"])
    run_dir = ckpt if ckpt.is_dir() else ckpt.parent
    model_path = ckpt / "model.rlt" if ckpt.is_dir() else ckpt
    params = load_checkpoint(model_path)
    D, _, _, C = params.dims
    ds = _load(cfg)
    if ds.num_classes != C:
        raise SchemaError(f"checkpoint has {C} classes, manifest has {ds.num_classes}")
    if len(ds) and ds.feature_dim != D:
        raise SchemaError(f"checkpoint expects {D}-dim features, manifest has {ds.feature_dim}")
    if len(ds) == 0:
        raise InvalidArgument("manifest has no utterances to evaluate")
    norm_path = run_dir / "norm.json"
    if norm_path.exists():
        with open(norm_path, encoding="utf-8") as fh:
            stats = json.load(fh)
        ds = apply_normalization(ds, (stats["mean"], stats["std"]))
    preds = predict_dataset(params, ds)
    rep = evaluate(ds.gold, preds, ds.class_names)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, p in zip(ds.utterances, preds):
            fh.write(f"{u.id}\t{ds.class_names[u.gold_label]}\t{ds.class_names[p]}\n")
    report_serialize(rep, out / "report.json")
    print(f"WA={rep.wa:.2f} UA={rep.ua:.2f} on {len(ds)} utterances")
    return 0


def cmd_report(cfg):
    ids0, init = ml.load_snapshot(cfg["initial"])
    ids1, final = ml.load_snapshot(cfg["final"])
    if init.logits.shape != final.logits.shape:
        raise SchemaError(f"snapshots disagree: {init.logits.shape} vs {final.logits.shape}")
    if ids0 != ids1:
        raise SchemaError("snapshots list different sample ids")
    C = init.num_classes
    names = cfg.get("class_names") or [f"class{c}" for c in range(C)]
    if len(names) != C:
        raise SchemaError(f"{len(names)} class names for {C} classes")
    updates = label_update_matrix(init.logits, final.logits, C)
    ref = init.dominant() if cfg["grouping"] == "gold" else final.dominant()
    means = class_mean_weights(final.weights, ref, C)
    doc = {
        "classes": list(names),
        "grouping": cfg["grouping"],
        "label_updates": [[round(float(v), 2) for v in row] for row in updates],
        "class_mean_weights": [None if v is None else round(v, 6) for v in means],
        "initial_class_mean_weights": [None if v is None else round(v, 6)
                                       for v in class_mean_weights(init.weights, ref, C)],
    }
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "analysis.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    width = max(len(n) for n in names)
    print("label updates (% of initial class, rows=from, cols=to)")
    print(" " * width + "  " + " ".join(f"{n:>8}" for n in names))
    for n, row in zip(names, updates):
        print(f"{n:>{width}}  " + " ".join(f"{v:8.2f}" for v in row))
    print(f"mean weights by {cfg['grouping']} class: "
          + ", ".join(f"{n}={'-' if v is None else f'{v:.3f}'}" for n, v in zip(names, means)))
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (InvalidArgument, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, NumericFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
