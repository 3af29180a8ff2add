"""Datasets of variable-length frame sequences.

Manifest format (UTF-8, LF)::

    #classes: neutral,happy,sad,angry
    <id>\\t<speaker>\\t<label>\\t<relative feature path>[\\t<true label>]

Feature files are CSV (one frame per line, D comma-separated floats) or,
with a ``.bin`` / ``.f32`` extension, two little-endian u32 (T, D) followed
by T*D little-endian float32 values.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, SchemaError
from .model import Batch, make_batch
from .numerics import Rng

STD_FLOOR = 1e-8
BINARY_EXTS = (".bin", ".f32")


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: str
    gold_label: int
    features: np.ndarray
    true_label: int | None = None

    @property
    def num_frames(self):
        return self.features.shape[0]


@dataclass
class Dataset:
    class_names: list
    utterances: list
    norm: tuple | None = None       # (mean, std) per feature dim, once applied

    def __len__(self):
        return len(self.utterances)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def feature_dim(self):
        return self.utterances[0].features.shape[1] if self.utterances else 0

    @property
    def gold(self):
        return np.array([u.gold_label for u in self.utterances], dtype=np.int64)

    @property
    def true(self):
        return np.array([-1 if u.true_label is None else u.true_label for u in self.utterances],
                        dtype=np.int64)

    @property
    def ids(self):
        return [u.id for u in self.utterances]

    def subset(self, indices) -> "Dataset":
        return Dataset(list(self.class_names), [self.utterances[i] for i in indices], self.norm)

    def class_counts(self):
        return np.bincount(self.gold, minlength=self.num_classes) if len(self) else np.zeros(self.num_classes, int)


@dataclass
class SynthSpec:
    num_classes: int = 4
    num_samples: int = 1000
    min_frames: int = 5
    max_frames: int = 15
    feature_dim: int = 8
    separation: float = 1.0
    within_std: float = 1.0
    flip_rate: float = 0.0
    proportions: list = field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])
    num_speakers: int = 10
    seed: int = 0

    def validate(self):
        p = np.asarray(self.proportions, dtype=np.float64)
        if p.size != self.num_classes:
            raise InvalidArgument("proportions must have one entry per class")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise InvalidArgument(f"proportions must be nonnegative and sum to 1, got sum {p.sum()}")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise InvalidArgument("flip_rate must lie in [0, 1]")
        if self.num_classes < 2 and self.flip_rate > 0:
            raise InvalidArgument("flipping needs at least two classes")
        if not 1 <= self.min_frames <= self.max_frames:
            raise InvalidArgument("need 1 <= min_frames <= max_frames")
        if self.feature_dim < 1 or self.num_samples < 0 or self.num_speakers < 1:
            raise InvalidArgument("feature_dim, num_samples and num_speakers must be positive")
        if self.within_std < 0:
            raise InvalidArgument("within_std must be >= 0")


# ---------------------------------------------------------------- feature files

def read_features(path) -> np.ndarray:
    path = Path(path)
    if path.suffix in BINARY_EXTS:
        blob = path.read_bytes()
        if len(blob) < 8:
            raise SchemaError(f"{path}: truncated header")
        T, D = struct.unpack("<2I", blob[:8])
        if len(blob) != 8 + 4 * T * D:
            raise SchemaError(f"{path}: expected {T}x{D} floats")
        return np.frombuffer(blob, dtype="<f4", offset=8).astype(np.float64).reshape(T, D)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows or len({len(r) for r in rows}) != 1:
        raise SchemaError(f"{path}: empty or ragged feature file")
    return np.array(rows, dtype=np.float64)


def write_features(path, x):
    path = Path(path)
    x = np.asarray(x)
    if path.suffix in BINARY_EXTS:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<2I", *x.shape))
            fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


# ---------------------------------------------------------------- manifest

def load_manifest(path) -> Dataset:
    path = Path(path)
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].startswith("#classes:"):
        raise SchemaError(f"{path}: first line must be '#classes: a,b,...'")
    class_names = [c.strip() for c in lines[0][len("#classes:"):].split(",") if c.strip()]
    lookup = {name: k for k, name in enumerate(class_names)}
    utts = []
    dim = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (4, 5):
            raise SchemaError(f"{path}:{lineno}: expected 4 or 5 tab-separated fields")
        uid, speaker, label, rel = parts[:4]
        if label not in lookup:
            raise SchemaError(f"{path}:{lineno}: unknown label {label!r}")
        true = None
        if len(parts) == 5:
            if parts[4] not in lookup:
                raise SchemaError(f"{path}:{lineno}: unknown true label {parts[4]!r}")
            true = lookup[parts[4]]
        fpath = base / rel
        if not fpath.exists():
            raise FileNotFoundError(f"features for {uid!r} not found: {fpath}")
        x = read_features(fpath)
        if dim is None:
            dim = x.shape[1]
        elif x.shape[1] != dim:
            raise SchemaError(f"{uid}: feature dim {x.shape[1]} differs from {dim}")
        if not np.all(np.isfinite(x)):
            raise SchemaError(f"{uid}: non-finite features")
        utts.append(Utterance(uid, speaker, lookup[label], x, true))
    return Dataset(class_names, utts)


def save_manifest(ds: Dataset, path, feature_dir="features", ext=".csv"):
    """Write the manifest and one feature file per utterance next to it."""
    path = Path(path)
    fdir = path.parent / feature_dir
    fdir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#classes: " + ",".join(ds.class_names) + "\n")
        for u in ds.utterances:
            rel = f"{feature_dir}/{u.id}{ext}"
            write_features(path.parent / rel, u.features)
            row = [u.id, u.speaker, ds.class_names[u.gold_label], rel]
            if u.true_label is not None:
                row.append(ds.class_names[u.true_label])
            fh.write("\t".join(row) + "\n")


# ---------------------------------------------------------------- normalization

def fit_normalization(train: Dataset):
    if not train.utterances:
        raise InvalidArgument("cannot fit normalization on an empty set")
    frames = np.concatenate([u.features for u in train.utterances], axis=0)
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), STD_FLOOR)
    return mean, std


def apply_normalization(ds: Dataset, stats) -> Dataset:
    mean, std = (np.asarray(a, dtype=np.float64) for a in stats)
    if ds.utterances and ds.feature_dim != mean.size:
        raise InvalidArgument(f"dataset dim {ds.feature_dim} != stats dim {mean.size}")
    utts = [replace(u, features=(u.features - mean) / std) for u in ds.utterances]
    return Dataset(list(ds.class_names), utts, (mean, std))


# ---------------------------------------------------------------- splits

def make_speaker_folds(ds: Dataset):
    """Leave-one-speaker-out: one (train_idx, test_idx) pair per speaker, in order
    of first appearance."""
    order = list(dict.fromkeys(u.speaker for u in ds.utterances))
    if len(order) < 2:
        raise InvalidArgument("leave-one-speaker-out needs at least two speakers")
    speakers = np.array([u.speaker for u in ds.utterances])
    folds = []
    for spk in order:
        test = np.flatnonzero(speakers == spk)
        train = np.flatnonzero(speakers != spk)
        folds.append((train, test))
    return folds


def stratified_split(ds: Dataset, fraction, rng: Rng):
    """Hold out ``fraction`` of each gold class. Returns (keep_idx, held_idx), both sorted."""
    gold = ds.gold
    held = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(gold == c)
        k = int(round(fraction * members.size))
        if fraction > 0 and members.size >= 2:
            k = min(max(k, 1), members.size - 1)
        else:
            k = min(k, max(members.size - 1, 0))
        if k:
            held.extend(rng.split(f"class{c}").permutation(members)[:k].tolist())
    held = np.array(sorted(held), dtype=np.int64)
    keep = np.setdiff1d(np.arange(len(ds)), held)
    return keep, held


def _members_by_class(ds):
    gold = ds.gold
    members = [np.flatnonzero(gold == c) for c in range(ds.num_classes)]
    if any(m.size == 0 for m in members):
        raise InvalidArgument("resampling needs every class to be present")
    return members


def oversample(ds: Dataset, rng: Rng) -> Dataset:
    """Duplicate minority-class utterances (with replacement) up to the largest class count.

    Copies keep the original features and get ids ``<id>#dup<k>``.
    """
    members = _members_by_class(ds)
    target = max(m.size for m in members)
    utts = list(ds.utterances)
    for c, m in enumerate(members):
        extra = target - m.size
        if extra:
            picks = rng.split(f"over{c}").integers(0, m.size, extra)
            for k, j in enumerate(picks):
                u = ds.utterances[m[j]]
                utts.append(replace(u, id=f"{u.id}#dup{k}"))
    return Dataset(list(ds.class_names), utts, ds.norm)


def undersample(ds: Dataset, rng: Rng) -> Dataset:
    """Keep a random ``min count`` utterances of every class, original order preserved."""
    members = _members_by_class(ds)
    target = min(m.size for m in members)
    keep = []
    for c, m in enumerate(members):
        keep.extend(rng.split(f"under{c}").permutation(m)[:target].tolist())
    return ds.subset(sorted(keep))


# ---------------------------------------------------------------- synthetic data

def class_means(spec: SynthSpec, rng: Rng):
    C, D = spec.num_classes, spec.feature_dim
    if D >= C:
        means = np.zeros((C, D))
        means[np.arange(C), np.arange(C)] = spec.separation
        return means
    dirs = rng.split("means").normal(C * D).reshape(C, D)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return spec.separation * dirs


def gen_synthetic(spec: SynthSpec, class_names=None) -> Dataset:
    """Gaussian frame sequences with class-dependent means and uniform label flips.

    Every frame of a class-c utterance is drawn from N(mean_c, within_std^2 I).
    With probability ``flip_rate`` the gold label is replaced by one of the
    other classes chosen uniformly; the true class is kept on the utterance.
    """
    spec.validate()
    C = spec.num_classes
    names = list(class_names) if class_names else [f"class{c}" for c in range(C)]
    rng = Rng(spec.seed)
    means = class_means(spec, rng)
    r_label = rng.split("labels")
    true = r_label.gen.choice(C, size=spec.num_samples, p=np.asarray(spec.proportions, dtype=np.float64))
    flips = rng.split("flips").random(spec.num_samples) < spec.flip_rate
    offsets = rng.split("offsets").integers(1, C, spec.num_samples) if C > 1 else np.zeros(spec.num_samples, int)
    gold = np.where(flips, (true + offsets) % max(C, 1), true)
    lengths = rng.split("lengths").integers(spec.min_frames, spec.max_frames + 1, spec.num_samples)
    r_frames = rng.split("frames")
    utts = []
    for n in range(spec.num_samples):
        T = int(lengths[n])
        noise = r_frames.normal(T * spec.feature_dim, 0.0, spec.within_std).reshape(T, spec.feature_dim)
        x = means[true[n]] + noise
        utts.append(Utterance(f"utt{n:05d}", f"spk{n % spec.num_speakers:02d}",
                              int(gold[n]), x, int(true[n])))
    return Dataset(names, utts)


# ---------------------------------------------------------------- batching

def collate(ds: Dataset, indices) -> Batch:
    idx = np.asarray(indices, dtype=np.int64)
    return make_batch([ds.utterances[i].features for i in idx], idx)


def batch_iter(ds: Dataset, batch_size, shuffle=False, rng: Rng | None = None):
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    order = np.arange(len(ds))
    if shuffle:
        if rng is None:
            raise InvalidArgument("shuffling needs an rng")
        order = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        yield collate(ds, order[start:start + batch_size])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
