"""Small numerical toolkit: softmax, Adam, seeded RNG streams and a
central-difference gradient oracle.

Everything works on float64 numpy arrays. A "parameter set" is either a
single array or a ``dict[str, np.ndarray]``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise InvalidArgument("softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def argmax_first(v, axis=-1):
    """argmax with ties resolved toward the lowest index (numpy already does this)."""
    return np.argmax(np.asarray(v), axis=axis)


# ---------------------------------------------------------------- RNG

class Rng:
    """Seeded random stream.

    ``split(label)`` derives an independent child stream from the seed and
    a text label, so components can draw without sharing state.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, label: str | int) -> "Rng":
        digest = hashlib.sha256(str(label).encode("utf-8")).digest()
        return Rng(self.seed, self._key + (int.from_bytes(digest[:4], "little"),))

    def normal(self, n, mean=0.0, std=1.0):
        return rng_normal(self, n, mean, std)

    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)


def rng_normal(rng: Rng, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise InvalidArgument(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full(n, float(mean))
    return mean + std * rng.gen.standard_normal(n)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            0,
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``;
    inputs are left untouched."""
    if lr < 0:
        raise InvalidArgument(f"lr must be >= 0, got {lr}")
    if set(params) != set(grads):
        raise InvalidArgument("params and grads have different keys")
    if not state.m:
        state = AdamState.zeros_like(params)
    if set(state.m) != set(params):
        raise InvalidArgument("Adam state does not match parameter keys")
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise InvalidArgument(f"shape mismatch for {k!r}: {p.shape} vs {g.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------- gradient oracle

def finite_diff_grad(f, params, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``params`` may be an array or a dict of arrays; the result mirrors it.
    Each coordinate is perturbed on a private copy.
    """
    if h <= 0:
        raise InvalidArgument("h must be positive")
    if isinstance(params, dict):
        base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        out = {}
        for key in base:
            def f_key(arr, key=key):
                trial = dict(base)
                trial[key] = arr
                return f(trial)
            out[key] = _fd_array(f_key, base[key], h, prefix=f"{key}")
        return out
    return _fd_array(f, np.array(params, dtype=np.float64), h, prefix="")


def _fd_array(f, p, h, prefix):
    grad = np.zeros_like(p)
    flat = p.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(p))
        flat[i] = orig - h
        fm = float(f(p))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            idx = [int(j) for j in np.unravel_index(i, p.shape)]
            raise NumericFailure(f"non-finite objective at coordinate {prefix}{idx}")
        # numerator in extended precision where the platform has it
        grad.reshape(-1)[i] = float((np.longdouble(fp) - np.longdouble(fm)) / (2 * np.longdouble(h)))
    return grad


def relative_error(a, b, floor=1e-6):
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
