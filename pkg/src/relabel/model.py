"""Attention-pooled bidirectional LSTM classifier.

Pipeline per utterance: dense+ReLU on every frame, forward and backward
LSTMs over the valid frames, softmax attention over time with a learned
vector ``u``, weighted average of the BLSTM states, a linear output layer
and a softmax over classes.

Padded batches are handled by running the backward LSTM over each sample's
valid prefix reversed in place, so padding never leaks into either
direction.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument, SchemaError
from .numerics import Rng, softmax

PARAM_ORDER = (
    "w1", "b1",
    "fw_wx", "fw_wh", "fw_b",
    "bw_wx", "bw_wh", "bw_b",
    "u", "wo", "bo",
)


@dataclass
class ModelParams:
    """Classifier weights. LSTM gate blocks are ordered input, forget, cell, output.

    Shapes, with D input dim, H1 dense width, H2 LSTM width, C classes::

        w1 (D, H1)        b1 (H1,)
        fw_wx (H1, 4H2)   fw_wh (H2, 4H2)   fw_b (4H2,)
        bw_wx (H1, 4H2)   bw_wh (H2, 4H2)   bw_b (4H2,)
        u (2H2,)
        wo (2H2, C)       bo (C,)
    """
    w1: np.ndarray
    b1: np.ndarray
    fw_wx: np.ndarray
    fw_wh: np.ndarray
    fw_b: np.ndarray
    bw_wx: np.ndarray
    bw_wh: np.ndarray
    bw_b: np.ndarray
    u: np.ndarray
    wo: np.ndarray
    bo: np.ndarray

    @property
    def dims(self):
        D, H1 = self.w1.shape
        H2 = self.fw_wh.shape[0]
        C = self.wo.shape[1]
        return D, H1, H2, C

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAM_ORDER}

    @classmethod
    def from_dict(cls, d):
        p = cls(**{name: np.asarray(d[name], dtype=np.float64) for name in PARAM_ORDER})
        p.validate()
        return p

    def copy(self):
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def set_writeable(self, flag: bool):
        for v in self.as_dict().values():
            v.flags.writeable = flag

    def validate(self):
        D, H1, H2, C = self.dims
        expected = param_shapes(D, H1, H2, C)
        for name in PARAM_ORDER:
            arr = getattr(self, name)
            if arr.shape != expected[name]:
                raise InvalidArgument(f"{name} has shape {arr.shape}, expected {expected[name]}")

    def equals(self, other) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.as_dict().values(), other.as_dict().values()))


def param_shapes(D, H1, H2, C):
    return {
        "w1": (D, H1), "b1": (H1,),
        "fw_wx": (H1, 4 * H2), "fw_wh": (H2, 4 * H2), "fw_b": (4 * H2,),
        "bw_wx": (H1, 4 * H2), "bw_wh": (H2, 4 * H2), "bw_b": (4 * H2,),
        "u": (2 * H2,),
        "wo": (2 * H2, C), "bo": (C,),
    }


def init_params(D, H1, H2, C, rng: Rng) -> ModelParams:
    """Weights uniform in +-1/sqrt(fan_in), zero biases, zero attention vector."""
    shapes = param_shapes(D, H1, H2, C)
    out = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            out[name] = rng.split(name).uniform(-bound, bound, shape)
        else:
            out[name] = np.zeros(shape)
    return ModelParams(**out)


def zero_params(D, H1, H2, C) -> ModelParams:
    return ModelParams(**{k: np.zeros(s) for k, s in param_shapes(D, H1, H2, C).items()})


@dataclass
class Batch:
    features: np.ndarray   # (B, T_max, D)
    mask: np.ndarray       # (B, T_max) bool, valid frames form a prefix
    indices: np.ndarray    # (B,) positions in the source dataset

    @property
    def lengths(self):
        return self.mask.sum(axis=1)

    def validate(self):
        if self.features.ndim != 3 or self.mask.shape != self.features.shape[:2]:
            raise InvalidArgument("batch features/mask shapes disagree")
        lengths = self.lengths
        if np.any(lengths < 1):
            raise InvalidArgument("every sequence needs at least one frame")
        T = self.mask.shape[1]
        prefix = np.arange(T)[None, :] < lengths[:, None]
        if not np.array_equal(prefix, self.mask):
            raise InvalidArgument("mask must be a contiguous valid prefix")


def make_batch(seqs, indices=None) -> Batch:
    """Pad a list of (T_i, D) arrays into a Batch."""
    B = len(seqs)
    T = max(s.shape[0] for s in seqs)
    D = seqs[0].shape[1]
    x = np.zeros((B, T, D))
    mask = np.zeros((B, T), dtype=bool)
    for b, s in enumerate(seqs):
        x[b, : s.shape[0]] = s
        mask[b, : s.shape[0]] = True
    if indices is None:
        indices = np.arange(B)
    return Batch(x, mask, np.asarray(indices))


@dataclass
class ForwardCache:
    x: np.ndarray
    mask: np.ndarray
    rev_idx: np.ndarray
    pre1: np.ndarray
    drop1: np.ndarray | None
    a1: np.ndarray            # post-dropout dense activations
    fw: tuple                 # (hs, cs, gates) in time order
    bw: tuple                 # (hs, cs, gates) in per-sample reversed order
    drop2: np.ndarray | None
    hcat: np.ndarray          # post-dropout BLSTM outputs, zero at padding
    scores: np.ndarray
    alpha: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    y: np.ndarray
    dims: tuple = field(default=())


def _reverse_index(mask):
    """Per-sample index that reverses the valid prefix and leaves padding in place."""
    B, T = mask.shape
    lengths = mask.sum(axis=1)
    t = np.arange(T)[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)


def _gather_time(a, idx):
    return np.take_along_axis(a, idx[:, :, None], axis=1)


def attention_weights(h, u, mask=None):
    """Softmax of the frame scores ``h @ u`` restricted to unmasked frames.

    Works on a single sequence (h: T x K) or a batch (B x T x K).
    """
    h = np.asarray(h, dtype=np.float64)
    scores = h @ np.asarray(u, dtype=np.float64)
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    return _masked_softmax(scores, np.asarray(mask, dtype=bool))


def _masked_softmax(scores, mask):
    if np.any(mask.sum(axis=-1) == 0):
        raise InvalidArgument("attention over a fully masked sequence")
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def attention_pool(h, alpha):
    """Weighted average over time: sum_t alpha_t h_t."""
    h = np.asarray(h, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if h.shape[:-1] != alpha.shape:
        raise InvalidArgument(f"alpha shape {alpha.shape} does not match h {h.shape}")
    return np.einsum("...t,...tk->...k", alpha, h)


def _dropout_mask(shape, rate, rng):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(params: ModelParams, batch: Batch, dropout_rate=0.0, rng: Rng | None = None,
            train_mode=False):
    """Class probabilities (B, C) and the cache needed by ``backward``.

    Dropout is inverted (scaled at train time) and only active when
    ``train_mode`` is set; it hits the dense output and the BLSTM outputs.
    """
    D, H1, H2, C = params.dims
    x = np.asarray(batch.features, dtype=np.float64)
    mask = np.asarray(batch.mask, dtype=bool)
    if x.ndim != 3 or x.shape[2] != D:
        raise InvalidArgument(f"batch feature dim {x.shape[-1]} does not match model input {D}")
    if mask.shape != x.shape[:2]:
        raise InvalidArgument("mask shape does not match features")
    if not 0.0 <= dropout_rate < 1.0:
        raise InvalidArgument("dropout_rate must be in [0, 1)")
    use_dropout = train_mode and dropout_rate > 0
    if use_dropout and rng is None:
        raise InvalidArgument("dropout in train mode needs an rng")
    B, T, _ = x.shape
    m = mask[:, :, None].astype(np.float64)

    pre1 = x @ params.w1 + params.b1
    a1 = np.maximum(pre1, 0.0)
    drop1 = _dropout_mask(a1.shape, dropout_rate, rng.split("drop1")) if use_dropout else None
    if drop1 is not None:
        a1 = a1 * drop1

    rev = _reverse_index(mask)
    fw = kernels.lstm_forward(a1 @ params.fw_wx + params.fw_b, params.fw_wh)
    a1_rev = _gather_time(a1, rev)
    bw = kernels.lstm_forward(a1_rev @ params.bw_wx + params.bw_b, params.bw_wh)
    h_bw = _gather_time(bw[0], rev)
    hcat = np.concatenate([fw[0], h_bw], axis=2) * m
    drop2 = _dropout_mask(hcat.shape, dropout_rate, rng.split("drop2")) if use_dropout else None
    if drop2 is not None:
        hcat = hcat * drop2

    scores = hcat @ params.u
    alpha = _masked_softmax(scores, mask)
    pooled = attention_pool(hcat, alpha)
    logits = pooled @ params.wo + params.bo
    y = softmax(logits, axis=1)
    cache = ForwardCache(x, mask, rev, pre1, drop1, a1, fw, bw, drop2, hcat,
                         scores, alpha, pooled, logits, y, dims=(D, H1, H2, C))
    return y, cache


def backward(params: ModelParams, cache: ForwardCache, dlogits, return_pooled_grad=False):
    """Gradients of a scalar loss w.r.t. every parameter, given d loss / d logits (B, C)."""
    if cache.dims != params.dims:
        raise InvalidArgument(f"cache built for dims {cache.dims}, params have {params.dims}")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise InvalidArgument(f"dlogits shape {dlogits.shape} != {cache.logits.shape}")
    H2 = params.dims[2]
    g = {}
    g["wo"] = cache.pooled.T @ dlogits
    g["bo"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params.wo.T                                  # (B, 2H2)

    alpha, hcat = cache.alpha, cache.hcat
    dhcat = alpha[:, :, None] * dpooled[:, None, :]
    dalpha = np.einsum("btk,bk->bt", hcat, dpooled)
    dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    g["u"] = np.einsum("bt,btk->k", dscores, hcat)
    dhcat += dscores[:, :, None] * params.u
    if cache.drop2 is not None:
        dhcat = dhcat * cache.drop2
    dhcat = dhcat * cache.mask[:, :, None]

    a1 = cache.a1
    da1 = np.zeros_like(a1)
    # forward direction
    hs, cs, gates = cache.fw
    dxp, g["fw_wh"] = kernels.lstm_backward(dhcat[:, :, :H2], gates, cs, hs, params.fw_wh)
    g["fw_wx"] = np.einsum("btd,btk->dk", a1, dxp)
    g["fw_b"] = dxp.sum(axis=(0, 1))
    da1 += dxp @ params.fw_wx.T
    # backward direction runs on reversed prefixes; the gather is its own inverse
    hs, cs, gates = cache.bw
    dh_rev = _gather_time(dhcat[:, :, H2:], cache.rev_idx)
    dxp, g["bw_wh"] = kernels.lstm_backward(dh_rev, gates, cs, hs, params.bw_wh)
    a1_rev = _gather_time(a1, cache.rev_idx)
    g["bw_wx"] = np.einsum("btd,btk->dk", a1_rev, dxp)
    g["bw_b"] = dxp.sum(axis=(0, 1))
    da1 += _gather_time(dxp @ params.bw_wx.T, cache.rev_idx)

    if cache.drop1 is not None:
        da1 = da1 * cache.drop1
    dpre1 = da1 * (cache.pre1 > 0)
    g["w1"] = np.einsum("btd,btk->dk", cache.x, dpre1)
    g["b1"] = dpre1.sum(axis=(0, 1))
    grads = {k: g[k] for k in PARAM_ORDER}
    if return_pooled_grad:
        return grads, dpooled
    return grads


def predict(params: ModelParams, batch: Batch) -> np.ndarray:
    y, _ = forward(params, batch)
    return np.argmax(y, axis=1)


# ---------------------------------------------------------------- checkpoint

MAGIC = b"RLT1"


def save_checkpoint(params: ModelParams, path):
    """Write ``RLT1``, u32 (D, H1, H2, C), then every tensor of PARAM_ORDER
    flattened row-major as little-endian float32."""
    D, H1, H2, C = params.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", D, H1, H2, C))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise SchemaError(f"{path}: not a model checkpoint (bad magic)")
    if len(blob) < 20:
        raise SchemaError(f"{path}: truncated header")
    D, H1, H2, C = struct.unpack("<4I", blob[4:20])
    shapes = param_shapes(D, H1, H2, C)
    need = sum(int(np.prod(s)) for s in shapes.values()) * 4
    if len(blob) - 20 != need:
        raise SchemaError(f"{path}: expected {need} payload bytes, found {len(blob) - 20}")
    off = 20
    out = {}
    for name in PARAM_ORDER:
        n = int(np.prod(shapes[name]))
        out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shapes[name])
        off += 4 * n
    return ModelParams(**out)
