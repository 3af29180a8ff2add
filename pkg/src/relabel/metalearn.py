"""Per-sample label logits and contribution weights.

Each training sample n carries real label logits ``l_n`` (length C) and a
positive weight ``w_n``. The training target is ``softmax(l_n)`` and the
sample loss is the cross-entropy against the model output divided by
``w_n``, so a larger weight means a smaller say in training.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericFailure, SchemaError
from .numerics import softmax

EPSILON_W = 1e-3
LOG_FLOOR = 1e-12


@dataclass
class LabelState:
    logits: np.ndarray    # (N, C)
    weights: np.ndarray   # (N,)

    @property
    def num_samples(self):
        return self.logits.shape[0]

    @property
    def num_classes(self):
        return self.logits.shape[1]

    def copy(self):
        return LabelState(self.logits.copy(), self.weights.copy())

    def set_writeable(self, flag: bool):
        self.logits.flags.writeable = flag
        self.weights.flags.writeable = flag

    def dominant(self):
        return np.argmax(self.logits, axis=1)

    def equals(self, other) -> bool:
        return np.array_equal(self.logits, other.logits) and np.array_equal(self.weights, other.weights)


def init_label_state(gold_labels, num_classes) -> LabelState:
    """One-hot logits at the gold class; weight = class count / mean class count per sample.

    The per-sample weight is ``count(c_n) / (sum_m count(c_m) / N)``, which
    averages to exactly one over the samples.
    """
    gold = np.asarray(gold_labels, dtype=np.int64)
    N = gold.size
    if N == 0:
        raise InvalidArgument("no samples")
    if gold.min() < 0 or gold.max() >= num_classes:
        raise InvalidArgument("gold label out of range")
    counts = np.bincount(gold, minlength=num_classes)
    if np.any(counts == 0):
        empty = [int(c) for c in np.flatnonzero(counts == 0)]
        raise InvalidArgument(f"classes {empty} have no samples")
    logits = np.zeros((N, num_classes))
    logits[np.arange(N), gold] = 1.0
    per_sample = counts[gold].astype(np.float64)
    weights = per_sample / (per_sample.sum() / N)
    return LabelState(logits, weights)


def dominant_class(l) -> int:
    l = np.asarray(l)
    if l.size == 0:
        raise InvalidArgument("empty label vector")
    return int(np.argmax(l))


def soft_labels(l):
    return softmax(l, axis=-1)


def _check_w(w, eps_w):
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < eps_w):
        raise InvalidArgument(f"weight below floor {eps_w}")
    return w


def sample_loss(y, l, w, eps_w=EPSILON_W, s=None):
    """-(sum_c s_c log y_c) / w with s = softmax(l); ``s`` may be given directly.

    Accepts single samples or stacked rows.
    """
    w = _check_w(w, eps_w)
    if s is None:
        s = soft_labels(l)
    logy = np.log(np.maximum(np.asarray(y, dtype=np.float64), LOG_FLOOR))
    return -(s * logy).sum(axis=-1) / w


def meta_grads(y, l, w, eps_w=EPSILON_W):
    """Gradients of ``sample_loss`` w.r.t. the label logits and the weight.

    dl_k = -(1/w) s_k (log y_k - sum_c s_c log y_c)
    dw   = -CE / w**2,   CE = -sum_c s_c log y_c

    dw is never positive, so a descent step raises every weight, and raises
    it most where the cross-entropy is largest.
    """
    w = _check_w(w, eps_w)
    s = soft_labels(l)
    logy = np.log(np.maximum(np.asarray(y, dtype=np.float64), LOG_FLOOR))
    mean_logy = (s * logy).sum(axis=-1, keepdims=True)
    wk = np.asarray(w)[..., None] if np.ndim(w) else w
    dl = -s * (logy - mean_logy) / wk
    dw = mean_logy[..., 0] / (np.asarray(w) ** 2)
    return dl, dw


def renormalize_weights(state: LabelState, eps_w=EPSILON_W) -> LabelState:
    """Clamp weights at ``eps_w`` then rescale so they average to one.

    The scale factor c solves ``mean(max(eps_w, c * w)) = 1``, so weights
    that a downward rescale would push under the floor stay pinned at it.
    Whenever nothing sits at the floor after scaling this is a plain
    clamp-then-scale.
    """
    w = np.maximum(state.weights, eps_w)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericFailure(f"weight sum is {total}")
    N = w.size
    if eps_w * N >= N:
        raise InvalidArgument("epsilon_w must be below 1 for a mean-one constraint")
    pinned = np.zeros(N, dtype=bool)
    while True:
        c = (N - eps_w * pinned.sum()) / w[~pinned].sum()
        newly = ~pinned & (c * w < eps_w)
        if not newly.any():
            break
        pinned |= newly
    out = np.where(pinned, eps_w, c * w)
    return LabelState(state.logits, out)


def logits_grad_from_targets(y, s, w, B):
    """d(mean_n loss_n)/d logits for the model output layer.

    Exact for the floored log: classes where y hits the floor contribute no
    gradient.
    """
    live = (y > LOG_FLOOR).astype(np.float64)
    sl = s * live
    return (y * sl.sum(axis=1, keepdims=True) - sl) / (w[:, None] * B)


# ---------------------------------------------------------------- snapshots

def save_snapshot(state: LabelState, ids, path):
    """Text header ``RLS1 C=<C> N=<N>\\n`` then per sample: u32 byte length and
    UTF-8 id, followed by C logits and the weight as little-endian float32."""
    ids = list(ids)
    N, C = state.logits.shape
    if len(ids) != N:
        raise InvalidArgument("ids do not match label state")
    with open(path, "wb") as fh:
        fh.write(f"RLS1 C={C} N={N}\n".encode("ascii"))
        for n, sid in enumerate(ids):
            raw = str(sid).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            row = np.append(state.logits[n], state.weights[n]).astype("<f4")
            fh.write(row.tobytes())


def load_snapshot(path):
    """Returns ``(ids, LabelState)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    header = blob[:nl].decode("ascii", errors="replace").split() if nl > 0 else []
    try:
        if header[0] != "RLS1":
            raise ValueError
        C = int(header[1].removeprefix("C="))
        N = int(header[2].removeprefix("N="))
    except (IndexError, ValueError):
        raise SchemaError(f"{path}: bad label-state header") from None
    off = nl + 1
    ids = []
    logits = np.zeros((N, C))
    weights = np.zeros(N)
    try:
        for n in range(N):
            (k,) = struct.unpack_from("<I", blob, off)
            off += 4
            ids.append(blob[off:off + k].decode("utf-8"))
            off += k
            row = np.frombuffer(blob, dtype="<f4", count=C + 1, offset=off).astype(np.float64)
            off += 4 * (C + 1)
            logits[n] = row[:C]
            weights[n] = row[C]
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: truncated or corrupt record {len(ids)}") from exc
    if off != len(blob):
        raise SchemaError(f"{path}: {len(blob) - off} trailing bytes")
    return ids, LabelState(logits, weights)
