"""Confusion-matrix metrics and analysis of learned label states.

WA is overall accuracy, UA the unweighted mean of per-class recalls.
Undefined ratios (0/0) are reported as 0. All percentages are in [0, 100].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, SchemaError


def confusion(golds, preds, C) -> np.ndarray:
    golds = np.asarray(golds, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if golds.shape != preds.shape:
        raise InvalidArgument("golds and preds differ in length")
    if golds.size and (golds.min() < 0 or preds.min() < 0 or golds.max() >= C or preds.max() >= C):
        raise InvalidArgument("class index out of range")
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (golds, preds), 1)
    return conf


def wa(conf) -> float:
    conf = np.asarray(conf)
    total = conf.sum()
    if total == 0:
        raise InvalidArgument("WA of an empty confusion matrix")
    return 100.0 * np.trace(conf) / total


def ua(conf) -> float:
    conf = np.asarray(conf)
    rows = conf.sum(axis=1)
    present = rows > 0
    if not present.any():
        raise InvalidArgument("UA needs at least one class with samples")
    recalls = np.diag(conf)[present] / rows[present]
    return 100.0 * recalls.mean()


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def prf(conf):
    """Per-class precision, recall, F1 as percentage arrays."""
    conf = np.asarray(conf)
    tp = np.diag(conf).astype(np.float64)
    precision = _ratio(tp, conf.sum(axis=0))
    recall = _ratio(tp, conf.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return 100 * precision, 100 * recall, 100 * f1


def label_update_matrix(initial_logits, final_logits, C=None):
    """Row i, column j: percentage of samples whose dominant label moved from i to j."""
    a = np.argmax(np.asarray(initial_logits), axis=1)
    b = np.argmax(np.asarray(final_logits), axis=1)
    if a.shape != b.shape:
        raise InvalidArgument("label states cover different samples")
    C = C or np.asarray(initial_logits).shape[1]
    counts = confusion(a, b, C).astype(np.float64)
    return 100 * _ratio(counts, counts.sum(axis=1, keepdims=True))


def class_mean_weights(weights, reference_labels, C):
    """Mean weight per reference class; ``None`` for classes with no samples."""
    weights = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(reference_labels, dtype=np.int64)
    if weights.shape != labels.shape:
        raise InvalidArgument("weights and labels differ in length")
    out = []
    for c in range(C):
        sel = labels == c
        out.append(float(weights[sel].mean()) if sel.any() else None)
    return out


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    class_names: list
    confusion: np.ndarray
    wa: float
    ua: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    label_updates: np.ndarray | None = None
    class_mean_weights: list | None = None
    grouping: str | None = None
    extra: dict = field(default_factory=dict)


def evaluate(golds, preds, class_names) -> EvalReport:
    C = len(class_names)
    conf = confusion(golds, preds, C)
    p, r, f = prf(conf)
    return EvalReport(list(class_names), conf, wa(conf), ua(conf), p, r, f)


def report_from_confusion(conf, class_names) -> EvalReport:
    conf = np.asarray(conf, dtype=np.int64)
    p, r, f = prf(conf)
    return EvalReport(list(class_names), conf, wa(conf), ua(conf), p, r, f)


def _pct(x):
    return round(float(x), 2)


def report_to_dict(rep: EvalReport) -> dict:
    d = {
        "classes": list(rep.class_names),
        "confusion": np.asarray(rep.confusion).astype(int).tolist(),
        "wa": _pct(rep.wa),
        "ua": _pct(rep.ua),
        "per_class": [
            {"class": name, "precision": _pct(p), "recall": _pct(r), "f1": _pct(f)}
            for name, p, r, f in zip(rep.class_names, rep.precision, rep.recall, rep.f1)
        ],
    }
    if rep.label_updates is not None:
        d["label_updates"] = [[_pct(v) for v in row] for row in np.asarray(rep.label_updates)]
    if rep.class_mean_weights is not None:
        d["class_mean_weights"] = [None if v is None else round(float(v), 6) for v in rep.class_mean_weights]
    if rep.grouping is not None:
        d["grouping"] = rep.grouping
    if rep.extra:
        d["extra"] = rep.extra
    return d


def report_from_dict(d) -> EvalReport:
    try:
        names = list(d["classes"])
        conf = np.array(d["confusion"], dtype=np.int64)
        per = d["per_class"]
        if conf.shape != (len(names), len(names)) or len(per) != len(names):
            raise SchemaError("report shapes disagree with class list")
        rep = EvalReport(
            names, conf, float(d["wa"]), float(d["ua"]),
            np.array([float(p["precision"]) for p in per]),
            np.array([float(p["recall"]) for p in per]),
            np.array([float(p["f1"]) for p in per]),
        )
        if "label_updates" in d:
            rep.label_updates = np.array(d["label_updates"], dtype=np.float64)
        if "class_mean_weights" in d:
            rep.class_mean_weights = [None if v is None else float(v) for v in d["class_mean_weights"]]
        rep.grouping = d.get("grouping")
        rep.extra = dict(d.get("extra", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed report: {exc}") from exc
    return rep


def report_dumps(rep: EvalReport) -> str:
    return json.dumps(report_to_dict(rep), indent=2, sort_keys=True) + "\n"


def report_serialize(rep: EvalReport, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_dumps(rep))


def report_load(path) -> EvalReport:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: top level must be an object")
    return report_from_dict(d)
