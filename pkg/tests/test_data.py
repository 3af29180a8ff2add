from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relabel.data import (Dataset, SynthSpec, Utterance, apply_normalization, batch_iter,
                          fit_normalization, gen_synthetic, load_manifest, make_speaker_folds,
                          oversample, read_features, save_manifest, stratified_split, undersample,
                          write_features)
from relabel.errors import InvalidArgument, SchemaError
from relabel.numerics import Rng


def _ds(labels, speakers=None, D=2, C=None, seed=0):
    r = np.random.default_rng(seed)
    speakers = speakers or ["s0"] * len(labels)
    utts = [Utterance(f"u{n}", speakers[n], lab, r.normal(size=(int(r.integers(1, 4)), D)))
            for n, lab in enumerate(labels)]
    C = C or max(labels) + 1
    return Dataset([f"c{c}" for c in range(C)], utts)


def _same_dataset(a, b):
    assert a.class_names == b.class_names
    assert len(a) == len(b)
    for u, v in zip(a.utterances, b.utterances):
        assert (u.id, u.speaker, u.gold_label, u.true_label) == (v.id, v.speaker, v.gold_label, v.true_label)
        assert np.array_equal(u.features, v.features)


# ---------------------------------------------------------------- manifest and features

def test_manifest_round_trip_csv(tmp_path, tiny_synth):
    save_manifest(tiny_synth, tmp_path / "m.tsv")
    _same_dataset(load_manifest(tmp_path / "m.tsv"), tiny_synth)


def test_manifest_round_trip_binary(tmp_path, tiny_synth):
    save_manifest(tiny_synth, tmp_path / "m.tsv", ext=".f32")
    back = load_manifest(tmp_path / "m.tsv")
    for u, v in zip(tiny_synth.utterances, back.utterances):
        assert np.array_equal(u.features.astype(np.float32), v.features)


def test_manifest_without_true_labels(tmp_path):
    ds = _ds([0, 1, 1])
    save_manifest(ds, tmp_path / "m.tsv")
    back = load_manifest(tmp_path / "m.tsv")
    _same_dataset(back, ds)
    assert np.array_equal(back.true, [-1, -1, -1])


def test_manifest_empty(tmp_path):
    (tmp_path / "m.tsv").write_text("#classes: a,b\n")
    ds = load_manifest(tmp_path / "m.tsv")
    assert len(ds) == 0 and ds.class_names == ["a", "b"]


def test_manifest_unknown_label(tmp_path):
    write_features(tmp_path / "x.csv", np.zeros((2, 3)))
    (tmp_path / "m.tsv").write_text("#classes: a,b\nu1\ts\tzzz\tx.csv\n")
    with pytest.raises(SchemaError, match="zzz"):
        load_manifest(tmp_path / "m.tsv")


def test_manifest_missing_features_names_id(tmp_path):
    (tmp_path / "m.tsv").write_text("#classes: a,b\nutt7\ts\ta\tnope.csv\n")
    with pytest.raises(FileNotFoundError, match="utt7"):
        load_manifest(tmp_path / "m.tsv")


def test_manifest_inconsistent_dim(tmp_path):
    write_features(tmp_path / "x.csv", np.zeros((2, 3)))
    write_features(tmp_path / "y.csv", np.zeros((2, 4)))
    (tmp_path / "m.tsv").write_text("#classes: a,b\nu1\ts\ta\tx.csv\nu2\ts\tb\ty.csv\n")
    with pytest.raises(SchemaError):
        load_manifest(tmp_path / "m.tsv")


def test_manifest_missing_header(tmp_path):
    (tmp_path / "m.tsv").write_text("u1\ts\ta\tx.csv\n")
    with pytest.raises(SchemaError):
        load_manifest(tmp_path / "m.tsv")


def test_csv_features_exact(tmp_path):
    x = np.random.default_rng(0).normal(size=(4, 3))
    write_features(tmp_path / "a.csv", x)
    assert np.array_equal(read_features(tmp_path / "a.csv"), x)
    assert (tmp_path / "a.csv").read_text().count("\n") == 4


def test_binary_features_layout(tmp_path):
    x = np.arange(6.0).reshape(2, 3)
    write_features(tmp_path / "a.bin", x)
    blob = (tmp_path / "a.bin").read_bytes()
    assert np.frombuffer(blob[:8], "<u4").tolist() == [2, 3]
    assert np.array_equal(np.frombuffer(blob[8:], "<f4"), x.ravel())
    (tmp_path / "b.bin").write_bytes(blob[:-1])
    with pytest.raises(SchemaError):
        read_features(tmp_path / "b.bin")


# ---------------------------------------------------------------- normalization

def test_normalization_constant_dim():
    utts = [Utterance("a", "s", 0, np.array([[1.0, 2.0], [3.0, 2.0]]))]
    ds = Dataset(["c"], utts)
    mean, std = fit_normalization(ds)
    assert std[1] == 1e-8
    out = apply_normalization(ds, (mean, std))
    assert np.array_equal(out.utterances[0].features[:, 1], [0.0, 0.0])


def test_normalization_pooled_stats():
    ds = _ds([0, 1, 0, 1, 1], D=3, seed=4)
    stats = fit_normalization(ds)
    frames = np.concatenate([u.features for u in apply_normalization(ds, stats).utterances])
    assert np.all(np.abs(frames.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(frames.std(axis=0) - 1) < 1e-6)


def test_normalization_identity_and_mean_frame():
    ds = _ds([0, 1], D=3)
    same = apply_normalization(ds, (np.zeros(3), np.ones(3)))
    _same_dataset(same, ds)
    m = np.array([1.0, -2.0, 0.5])
    single = Dataset(["c"], [Utterance("a", "s", 0, m[None, :])])
    assert np.array_equal(apply_normalization(single, (m, np.full(3, 2.0))).utterances[0].features, np.zeros((1, 3)))


def test_normalization_applied_twice_differs():
    ds = _ds([0, 1, 1], D=2, seed=2)
    mean, std = np.array([1.0, -1.0]), np.array([2.0, 0.5])
    twice = apply_normalization(apply_normalization(ds, (mean, std)), (mean, std))
    for u, v in zip(ds.utterances, twice.utterances):
        assert np.allclose(v.features, ((u.features - mean) / std - mean) / std)


def test_normalization_dim_mismatch():
    with pytest.raises(InvalidArgument):
        apply_normalization(_ds([0], D=2), (np.zeros(3), np.ones(3)))


def test_normalization_ignores_test_data():
    train, test = _ds([0, 1, 0], seed=1), _ds([1, 1], seed=2)
    before = fit_normalization(train)
    test.utterances[0].features[:] = 1e6
    after = fit_normalization(train)
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


# ---------------------------------------------------------------- folds and splits

def test_two_speaker_folds():
    ds = _ds([0, 1, 0, 1], speakers=["b", "a", "b", "a"])
    folds = make_speaker_folds(ds)
    assert len(folds) == 2
    assert folds[0][1].tolist() == [0, 2] and folds[1][1].tolist() == [1, 3]
    for train, test in folds:
        assert sorted(train.tolist() + test.tolist()) == [0, 1, 2, 3]


@settings(max_examples=30)
@given(st.lists(st.integers(0, 9), min_size=2, max_size=40))
def test_folds_partition(spk):
    if len(set(spk)) < 2:
        return
    ds = _ds([0] * len(spk), speakers=[f"s{k}" for k in spk])
    folds = make_speaker_folds(ds)
    assert len(folds) == len(set(spk))
    tests = np.concatenate([t for _, t in folds])
    assert sorted(tests.tolist()) == list(range(len(spk)))
    speakers = np.array([u.speaker for u in ds.utterances])
    for train, test in folds:
        assert not set(speakers[train]) & set(speakers[test])


def test_synthetic_ten_speakers_ten_folds():
    ds = gen_synthetic(SynthSpec(num_samples=50, num_speakers=10))
    assert len(make_speaker_folds(ds)) == 10


def test_single_speaker_rejected():
    with pytest.raises(InvalidArgument):
        make_speaker_folds(_ds([0, 1]))


def test_stratified_split():
    ds = _ds([0] * 20 + [1] * 10 + [2] * 3)
    keep, held = stratified_split(ds, 0.1, Rng(0))
    assert sorted(np.concatenate([keep, held]).tolist()) == list(range(33))
    assert Counter(ds.gold[held].tolist()) == {0: 2, 1: 1, 2: 1}
    again = stratified_split(ds, 0.1, Rng(0))
    assert np.array_equal(held, again[1])


# ---------------------------------------------------------------- resampling

def test_oversample_counts_and_ids():
    ds = _ds([0, 0, 1, 1, 1, 1, 1])
    out = oversample(ds, Rng(0))
    assert out.class_counts().tolist() == [5, 5]
    originals = {u.id: u for u in ds.utterances}
    for u in out.utterances:
        src = originals[u.id.split("#dup")[0]]
        assert np.array_equal(u.features, src.features) and u.gold_label == src.gold_label


def test_oversample_balanced_unchanged():
    ds = _ds([0, 1, 0, 1])
    assert sorted(oversample(ds, Rng(0)).ids) == sorted(ds.ids)


def test_undersample():
    ds = _ds([0, 0, 1, 1, 1, 1, 1])
    out = undersample(ds, Rng(0))
    assert out.class_counts().tolist() == [2, 2]
    assert set(out.ids) <= set(ds.ids)
    bal = _ds([1, 0, 0, 1])
    assert sorted(undersample(bal, Rng(0)).ids) == sorted(bal.ids)


def test_resampling_needs_all_classes():
    with pytest.raises(InvalidArgument):
        oversample(_ds([0, 0], C=2), Rng(0))
    with pytest.raises(InvalidArgument):
        undersample(_ds([1, 1], C=2), Rng(0))


# ---------------------------------------------------------------- synthetic data

def test_synth_no_flips():
    ds = gen_synthetic(SynthSpec(num_samples=200, flip_rate=0.0))
    assert np.array_equal(ds.gold, ds.true)


def test_synth_all_flipped():
    ds = gen_synthetic(SynthSpec(num_samples=200, flip_rate=1.0))
    assert np.all(ds.gold != ds.true)


def test_synth_flip_fraction():
    ds = gen_synthetic(SynthSpec(num_samples=1000, flip_rate=0.2, seed=0))
    frac = np.mean(ds.gold != ds.true)
    assert 0.16 <= frac <= 0.24


def test_synth_reproducible_and_shaped():
    spec = SynthSpec(num_samples=30, min_frames=2, max_frames=4, feature_dim=5, seed=9)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    _same_dataset(a, b)
    assert all(2 <= u.num_frames <= 4 and u.features.shape[1] == 5 for u in a.utterances)
    assert [u.speaker for u in a.utterances[:3]] == ["spk00", "spk01", "spk02"]


def test_synth_frame_means_follow_class():
    spec = SynthSpec(num_samples=400, feature_dim=4, separation=3.0, within_std=0.5, seed=1)
    ds = gen_synthetic(spec)
    for c in range(4):
        frames = np.concatenate([u.features for u in ds.utterances if u.true_label == c])
        expect = np.zeros(4)
        expect[c] = 3.0
        assert np.allclose(frames.mean(axis=0), expect, atol=0.1)


def test_synth_proportions_respected():
    ds = gen_synthetic(SynthSpec(num_samples=4000, proportions=[0.1, 0.2, 0.3, 0.4], seed=2))
    frac = np.bincount(ds.true, minlength=4) / 4000
    assert np.allclose(frac, [0.1, 0.2, 0.3, 0.4], atol=0.03)


@pytest.mark.parametrize("kw", [dict(proportions=[0.5, 0.6, 0.0, 0.0]), dict(flip_rate=1.5),
                                dict(min_frames=4, max_frames=2), dict(proportions=[1.0])])
def test_synth_validation(kw):
    with pytest.raises(InvalidArgument):
        SynthSpec(**kw).validate()


# ---------------------------------------------------------------- batching

def test_batch_sizes_and_order():
    ds = _ds([0, 1, 0, 1, 0])
    batches = list(batch_iter(ds, 2))
    assert [len(b.indices) for b in batches] == [2, 2, 1]
    assert np.concatenate([b.indices for b in batches]).tolist() == [0, 1, 2, 3, 4]


def test_batch_padding_mask():
    ds = _ds([0, 1, 0, 1, 0], D=3, seed=5)
    for b in batch_iter(ds, 3):
        b.validate()
        for row, i in enumerate(b.indices):
            T = ds.utterances[i].num_frames
            assert np.array_equal(b.features[row, :T], ds.utterances[i].features)
            assert np.all(b.features[row, T:] == 0)


@settings(max_examples=30)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 100))
def test_shuffled_batches_cover_dataset(n, bs, seed):
    ds = _ds([k % 2 for k in range(n)], C=2)
    ids = np.concatenate([b.indices for b in batch_iter(ds, bs, shuffle=True, rng=Rng(seed))])
    assert sorted(ids.tolist()) == list(range(n))
    again = np.concatenate([b.indices for b in batch_iter(ds, bs, shuffle=True, rng=Rng(seed))])
    assert np.array_equal(ids, again)


def test_batch_iter_errors():
    with pytest.raises(InvalidArgument):
        list(batch_iter(_ds([0]), 0))
    with pytest.raises(InvalidArgument):
        list(batch_iter(_ds([0]), 1, shuffle=True))
