"""Alternating optimisation of the classifier and the per-sample label state.

Each round runs one epoch of Adam on the network with the label logits and
weights frozen, then one epoch of plain gradient steps on the label logits
and weights with the network frozen. Early stopping watches the validation
loss measured against the gold labels with unit weights.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metalearn as ml
from .data import (Dataset, apply_normalization, batch_iter, fit_normalization,
                   make_speaker_folds, oversample, stratified_split, undersample)
from .errors import InvalidArgument, NumericFailure
from .metrics import (EvalReport, class_mean_weights, evaluate, label_update_matrix,
                      report_from_confusion, report_serialize)
from .model import ModelParams, backward, forward, init_params, save_checkpoint
from .numerics import AdamState, Rng, adam_step

RESAMPLE_CHOICES = ("none", "oversample", "undersample")
RENORM_CHOICES = ("per-batch", "per-epoch")


@dataclass
class TrainConfig:
    lr_theta: float = 1e-3
    lr_meta: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    dropout_rate: float = 0.5
    seed: int = 0
    epsilon_w: float = ml.EPSILON_W
    learn_labels: bool = True
    learn_weights: bool = True
    pretrain_epochs: int = 0
    renorm_granularity: str = "per-epoch"
    meta_dropout: bool = False
    hidden1: int = 512
    hidden2: int = 128
    val_fraction: float = 0.1

    def validate(self):
        if self.lr_theta < 0 or self.lr_meta < 0:
            raise InvalidArgument("learning rates must be >= 0")
        if self.patience < 1:
            raise InvalidArgument("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("max_epochs and batch_size must be >= 1")
        if self.pretrain_epochs < 0:
            raise InvalidArgument("pretrain_epochs must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidArgument("dropout_rate must lie in [0, 1)")
        if self.epsilon_w <= 0:
            raise InvalidArgument("epsilon_w must be positive")
        if self.renorm_granularity not in RENORM_CHOICES:
            raise InvalidArgument(f"renorm_granularity must be one of {RENORM_CHOICES}")
        if self.hidden1 < 1 or self.hidden2 < 1:
            raise InvalidArgument("layer sizes must be positive")
        if not 0 <= self.val_fraction < 1:
            raise InvalidArgument("val_fraction must lie in [0, 1)")
        return self


@dataclass
class TrainHistory:
    rounds: list = field(default_factory=list)
    pretrain: list = field(default_factory=list)
    best_round: int | None = None

    @property
    def val_losses(self):
        return [r["val_loss"] for r in self.rounds]

    def __len__(self):
        return len(self.rounds)


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    best_round: int     # 1-based


def early_stop_check(val_losses, patience) -> StopDecision:
    """Stop once ``patience`` rounds have passed since the lowest loss (earliest on ties)."""
    if len(val_losses) == 0:
        raise InvalidArgument("early stopping needs at least one round")
    best = int(np.argmin(np.asarray(val_losses, dtype=np.float64)))
    return StopDecision(len(val_losses) - 1 - best >= patience, best + 1)


# ---------------------------------------------------------------- epochs

def train_epoch_theta(params: ModelParams, label_state: ml.LabelState, ds: Dataset,
                      cfg: TrainConfig, rng: Rng, adam_state: AdamState):
    """One Adam pass over shuffled batches. Returns (params, adam_state, mean loss)."""
    if label_state.num_samples != len(ds):
        raise InvalidArgument("label state does not cover the dataset")
    label_state.set_writeable(False)
    try:
        total, count = 0.0, 0
        for k, batch in enumerate(batch_iter(ds, cfg.batch_size, shuffle=True, rng=rng.split("shuffle"))):
            idx = batch.indices
            y, cache = forward(params, batch, cfg.dropout_rate, rng.split(f"batch{k}"), train_mode=True)
            s = ml.soft_labels(label_state.logits[idx])
            w = label_state.weights[idx]
            losses = ml.sample_loss(y, None, w, cfg.epsilon_w, s=s)
            loss = losses.mean()
            if not np.isfinite(loss):
                raise NumericFailure(f"non-finite training loss in batch {k}")
            dlogits = ml.logits_grad_from_targets(y, s, w, len(idx))
            grads = backward(params, cache, dlogits)
            new, adam_state = adam_step(params.as_dict(), grads, adam_state, cfg.lr_theta,
                                        cfg.beta1, cfg.beta2, cfg.adam_eps)
            params = ModelParams(**new)
            total += losses.sum()
            count += len(idx)
    finally:
        label_state.set_writeable(True)
    return params, adam_state, total / max(count, 1)


def train_epoch_meta(params: ModelParams, label_state: ml.LabelState, ds: Dataset,
                     cfg: TrainConfig, rng: Rng):
    """One pass of per-sample gradient steps on (label logits, weight).

    Returns (new label state, mean sample loss before the updates).
    """
    if label_state.num_samples != len(ds):
        raise InvalidArgument("label state does not cover the dataset")
    logits = label_state.logits.copy()
    weights = label_state.weights.copy()
    step_l = cfg.learn_labels and cfg.lr_meta > 0
    step_w = cfg.learn_weights and cfg.lr_meta > 0
    params.set_writeable(False)
    try:
        total, count = 0.0, 0
        for k, batch in enumerate(batch_iter(ds, cfg.batch_size, shuffle=False)):
            idx = batch.indices
            y, _ = forward(params, batch, cfg.dropout_rate, rng.split(f"batch{k}"),
                           train_mode=cfg.meta_dropout)
            l, w = logits[idx], weights[idx]
            losses = ml.sample_loss(y, l, w, cfg.epsilon_w)
            if not np.all(np.isfinite(losses)):
                raise NumericFailure(f"non-finite meta loss in batch {k}")
            total += losses.sum()
            count += len(idx)
            dl, dw = ml.meta_grads(y, l, w, cfg.epsilon_w)
            if step_l:
                logits[idx] = l - cfg.lr_meta * dl
            if step_w:
                weights[idx] = w - cfg.lr_meta * dw
                if cfg.renorm_granularity == "per-batch":
                    weights = ml.renormalize_weights(ml.LabelState(logits, weights), cfg.epsilon_w).weights
        if step_w and cfg.renorm_granularity == "per-epoch":
            weights = ml.renormalize_weights(ml.LabelState(logits, weights), cfg.epsilon_w).weights
    finally:
        params.set_writeable(True)
    return ml.LabelState(logits, weights), total / max(count, 1)


def validate_model(params: ModelParams, ds: Dataset, batch_size=64):
    """Gold-label cross-entropy with unit weights, plus WA/UA, in eval mode."""
    total = 0.0
    preds = np.zeros(len(ds), dtype=np.int64)
    gold = ds.gold
    for batch in batch_iter(ds, batch_size):
        y, _ = forward(params, batch)
        idx = batch.indices
        total -= np.log(np.maximum(y[np.arange(len(idx)), gold[idx]], ml.LOG_FLOOR)).sum()
        preds[idx] = np.argmax(y, axis=1)
    rep = evaluate(gold, preds, ds.class_names)
    return total / len(ds), rep.wa, rep.ua


def predict_dataset(params: ModelParams, ds: Dataset, batch_size=64):
    preds = np.zeros(len(ds), dtype=np.int64)
    for batch in batch_iter(ds, batch_size):
        y, _ = forward(params, batch)
        preds[batch.indices] = np.argmax(y, axis=1)
    return preds


# ---------------------------------------------------------------- fitting

def alternating_fit(ds_train: Dataset, ds_val: Dataset, cfg: TrainConfig, rng: Rng | None = None,
                    on_round=None):
    """Run the alternating schedule with early stopping.

    Returns (best params, final label state, history). ``on_round(r, params,
    label_state, record)`` is called after every completed round.
    """
    cfg.validate()
    if len(ds_train) == 0 or len(ds_val) == 0:
        raise InvalidArgument("training and validation sets must be non-empty")
    if ds_train.feature_dim != ds_val.feature_dim or ds_train.num_classes != ds_val.num_classes:
        raise InvalidArgument("train and validation sets disagree on D or C")
    rng = rng or Rng(cfg.seed)
    C = ds_train.num_classes
    params = init_params(ds_train.feature_dim, cfg.hidden1, cfg.hidden2, C, rng.split("init"))
    state = ml.init_label_state(ds_train.gold, C)
    adam = AdamState.zeros_like(params.as_dict())
    history = TrainHistory()

    if cfg.pretrain_epochs:
        best = (np.inf, params, adam)
        for e in range(1, cfg.pretrain_epochs + 1):
            params, adam, tl = train_epoch_theta(params, state, ds_train, cfg, rng.split(f"pretrain{e}"), adam)
            vl, vwa, vua = validate_model(params, ds_val)
            history.pretrain.append({"epoch": e, "train_loss": tl, "val_loss": vl, "val_wa": vwa, "val_ua": vua})
            if vl < best[0]:
                best = (vl, params, adam)
            if early_stop_check([r["val_loss"] for r in history.pretrain], cfg.patience).stop:
                break
        _, params, adam = best

    best_params = params
    gold = ds_train.gold
    for r in range(1, cfg.max_epochs + 1):
        params, adam, tl = train_epoch_theta(params, state, ds_train, cfg, rng.split(f"theta{r}"), adam)
        state, meta_loss = train_epoch_meta(params, state, ds_train, cfg, rng.split(f"meta{r}"))
        vl, vwa, vua = validate_model(params, ds_val)
        record = {
            "round": r, "train_loss": tl, "val_loss": vl, "val_wa": vwa, "val_ua": vua,
            "meta_loss": meta_loss,
            "mean_w": class_mean_weights(state.weights, gold, C),
            "label_flips": int((state.dominant() != gold).sum()),
        }
        history.rounds.append(record)
        decision = early_stop_check(history.val_losses, cfg.patience)
        if decision.best_round == r:
            best_params = params
        if on_round is not None:
            on_round(r, params, state, record)
        if decision.stop:
            break
    history.best_round = early_stop_check(history.val_losses, cfg.patience).best_round
    return best_params, state, history


@dataclass
class FitResult:
    params: ModelParams
    initial_state: ml.LabelState
    state: ml.LabelState
    history: TrainHistory
    report: EvalReport
    norm: tuple
    train_ids: list
    train_gold: np.ndarray
    train_true: np.ndarray


def resample(ds: Dataset, how: str, rng: Rng) -> Dataset:
    if how == "none":
        return ds
    if how == "oversample":
        return oversample(ds, rng)
    if how == "undersample":
        return undersample(ds, rng)
    raise InvalidArgument(f"resample must be one of {RESAMPLE_CHOICES}")


def fit_and_evaluate(train: Dataset, test: Dataset, cfg: TrainConfig, rng: Rng,
                     resample_how="none", on_round=None, snapshot_dir=None) -> FitResult:
    """Normalise on ``train``, carve a validation split, fit, and score on ``test``.

    With ``snapshot_dir`` the label state is written there after every round
    as ``round_XXX.rls``.
    """
    stats = fit_normalization(train)
    train = apply_normalization(train, stats)
    test = apply_normalization(test, stats)
    keep, held = stratified_split(train, cfg.val_fraction, rng.split("val"))
    fit_set, val_set = train.subset(keep), train.subset(held)
    if len(val_set) == 0:
        val_set = fit_set
    fit_set = resample(fit_set, resample_how, rng.split("resample"))
    if snapshot_dir is not None:
        snapshot_dir = Path(snapshot_dir)
        snapshot_dir.mkdir(parents=True, exist_ok=True)
        user_hook = on_round

        def on_round(r, params, state, record):
            ml.save_snapshot(state, fit_set.ids, snapshot_dir / f"round_{r:03d}.rls")
            if user_hook is not None:
                user_hook(r, params, state, record)

    params, state, history = alternating_fit(fit_set, val_set, cfg, rng.split("fit"), on_round)
    preds = predict_dataset(params, test)
    report = evaluate(test.gold, preds, test.class_names)
    initial = ml.init_label_state(fit_set.gold, fit_set.num_classes)
    report.label_updates = label_update_matrix(initial.logits, state.logits)
    report.class_mean_weights = class_mean_weights(state.weights, fit_set.gold, fit_set.num_classes)
    report.grouping = "gold"
    return FitResult(params, initial, state, history, report, stats, fit_set.ids,
                     fit_set.gold, fit_set.true)


def _run_fold(args):
    k, ds, train_idx, test_idx, cfg, resample_how = args
    rng = Rng(cfg.seed).split(f"fold{k}")
    return fit_and_evaluate(ds.subset(train_idx), ds.subset(test_idx), cfg, rng, resample_how)


def crossval(ds: Dataset, cfg: TrainConfig, jobs=1, resample_how="none"):
    """Leave-one-speaker-out cross-validation.

    Returns (per-fold FitResults, pooled report over the summed confusions).
    Folds draw from independent streams, so ``jobs`` never changes results.
    """
    cfg.validate()
    folds = make_speaker_folds(ds)
    tasks = [(k, ds, tr, te, cfg, resample_how) for k, (tr, te) in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    pooled_conf = sum(r.report.confusion for r in results)
    pooled = report_from_confusion(pooled_conf, ds.class_names)
    return results, pooled


# ---------------------------------------------------------------- run directories

def history_lines(history: TrainHistory):
    return [json.dumps(r, sort_keys=True) for r in history.rounds]


def write_history(history: TrainHistory, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in history_lines(history):
            fh.write(line + "\n")


def read_history(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_run_dir(out, result: FitResult, cfg: TrainConfig):
    """model.rlt, labels_init.rls, labels_final.rls, history.jsonl, norm.json,
    config.json and report.json."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out / "model.rlt")
    ml.save_snapshot(result.initial_state, result.train_ids, out / "labels_init.rls")
    ml.save_snapshot(result.state, result.train_ids, out / "labels_final.rls")
    write_history(result.history, out / "history.jsonl")
    mean, std = result.norm
    with open(out / "norm.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"mean": [float(v) for v in mean], "std": [float(v) for v in std]}, fh)
        fh.write("\n")
    with open(out / "config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report_serialize(result.report, out / "report.json")
