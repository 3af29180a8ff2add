import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relabel.errors import InvalidArgument, NumericFailure, SchemaError
from relabel.metalearn import (LabelState, dominant_class, init_label_state, load_snapshot,
                               logits_grad_from_targets, meta_grads, renormalize_weights,
                               sample_loss, save_snapshot, soft_labels)
from relabel.numerics import finite_diff_grad, relative_error, softmax


def test_init_example_counts_2_1_1():
    # counts [2,1,1]; per-sample counts [2,2,1,1] average 1.5
    st_ = init_label_state([0, 0, 1, 2], 3)
    assert np.allclose(st_.weights, [4 / 3, 4 / 3, 2 / 3, 2 / 3], atol=1e-15)
    assert abs(st_.weights.mean() - 1) < 1e-12
    assert np.array_equal(st_.logits, np.eye(3)[[0, 0, 1, 2]])


def test_init_single_class_unit_weights():
    st_ = init_label_state([0, 0, 0, 0, 0], 1)
    assert np.array_equal(st_.weights, np.ones(5))


def test_init_minority_class_gets_small_weight():
    gold = [0] * 10 + [1] * 40 + [2] * 30 + [3] * 20
    w = init_label_state(gold, 4).weights
    assert w[0] < 1 < w[10]


def test_init_empty_class_raises():
    with pytest.raises(InvalidArgument):
        init_label_state([0, 0, 2], 3)


def test_init_label_out_of_range():
    with pytest.raises(InvalidArgument):
        init_label_state([0, 3], 3)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=60))
def test_init_invariants(gold):
    C = max(gold) + 1
    if len(set(gold)) != C:
        return
    s = init_label_state(gold, C)
    assert abs(s.weights.mean() - 1) < 1e-9
    assert np.array_equal(s.dominant(), gold)


def test_dominant_class_examples():
    assert dominant_class([0, 0, 1, 0]) == 2
    assert dominant_class([0.5, 0.5, 0.5]) == 0
    assert dominant_class([0.1, 0.9, 0.3, 0.9]) == 1


def test_soft_labels_examples():
    assert np.allclose(soft_labels([0, 0, 0, 0]), 0.25)
    e = math.e
    expect = [e / (e + 3)] + [1 / (e + 3)] * 3
    got = soft_labels([1.0, 0, 0, 0])
    assert np.allclose(got, expect, atol=1e-15)
    assert np.allclose(got, [0.4754, 0.1749, 0.1749, 0.1749], atol=1e-4)
    assert np.allclose(soft_labels(np.array([1.0, 2, 3]) + 40), soft_labels([1.0, 2, 3]))


def test_sample_loss_examples():
    y = np.array([0.5, 0.25, 0.25])
    assert sample_loss(y, None, 1.0, s=np.array([1.0, 0, 0])) == pytest.approx(math.log(2))
    yu = np.full(4, 0.25)
    assert sample_loss(yu, np.array([3.0, -1, 0, 2]), 2.0) == pytest.approx(math.log(4) / 2)


@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), st.floats(0.01, 10), st.floats(0.1, 10))
def test_sample_loss_weight_scaling(l, w, a):
    y = softmax(np.array([0.3, -1.0, 2.0, 0.1]))
    assert sample_loss(y, l, a * w) * a == pytest.approx(sample_loss(y, l, w), rel=1e-12)


def test_sample_loss_weight_floor():
    with pytest.raises(InvalidArgument):
        sample_loss(np.full(2, 0.5), np.zeros(2), 1e-4)


def test_sample_loss_log_floor():
    y = np.array([1.0, 0.0])
    assert np.isfinite(sample_loss(y, None, 1.0, s=np.array([0.0, 1.0])))


def test_meta_grads_uniform_y_zero_dl():
    dl, dw = meta_grads(np.full(4, 0.25), np.array([2.0, 0, -1, 0.5]), 1.3)
    assert np.allclose(dl, 0, atol=1e-15)
    assert dw < 0


@pytest.mark.parametrize("seed", range(10))
def test_meta_grads_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    y = softmax(r.normal(size=4))
    l = r.normal(size=4)
    w = r.uniform(0.2, 3)
    dl, dw = meta_grads(y, l, w)
    num_l = finite_diff_grad(lambda v: sample_loss(y, v, w), l)
    num_w = finite_diff_grad(lambda v: sample_loss(y, l, v[0]), np.array([w]))[0]
    assert relative_error(dl, num_l).max() < 1e-6
    assert relative_error(dw, num_w) < 1e-6


def test_meta_grads_batched_rows():
    r = np.random.default_rng(0)
    y = softmax(r.normal(size=(5, 3)), axis=1)
    l = r.normal(size=(5, 3))
    w = r.uniform(0.5, 2, 5)
    dl, dw = meta_grads(y, l, w)
    for n in range(5):
        a, b = meta_grads(y[n], l[n], w[n])
        assert np.allclose(dl[n], a) and np.isclose(dw[n], b)


@given(arrays(np.float64, 3, elements=st.floats(-4, 4)), arrays(np.float64, 3, elements=st.floats(-4, 4)))
def test_weight_step_raises_high_loss_weights(zy, l):
    # the loss falls as w grows, so a descent step moves w up when CE > 0
    y = softmax(zy)
    _, dw = meta_grads(y, l, 1.0)
    ce = sample_loss(y, l, 1.0)
    assert dw == pytest.approx(-ce)
    assert dw <= 0


def test_weight_step_order_follows_loss():
    r = np.random.default_rng(4)
    y = softmax(r.normal(size=(20, 4)) * 2, axis=1)
    l = r.normal(size=(20, 4))
    w = np.ones(20)
    ce = sample_loss(y, l, w)
    _, dw = meta_grads(y, l, w)
    w_new = w - 0.1 * dw
    assert np.array_equal(np.argsort(w_new, kind="stable"), np.argsort(ce, kind="stable"))


def test_dl_zero_iff_logy_constant():
    l = np.array([0.2, 0.1, -0.3])
    dl, _ = meta_grads(np.array([0.2, 0.3, 0.5]), l, 1.0)
    assert np.abs(dl).max() > 1e-3


def _renorm(w, eps=1e-3):
    return renormalize_weights(LabelState(np.zeros((len(w), 2)), np.asarray(w, float)), eps).weights


def test_renormalize_examples():
    assert np.allclose(_renorm([1, 3]), [0.5, 1.5])
    assert np.allclose(_renorm([2, 2, 2]), [1, 1, 1])
    # clamp to [1e-3, 1], then scale by 2 / 1.001
    assert np.allclose(_renorm([-1, 1]), [0.002 / 1.001, 2 / 1.001], atol=1e-12)
    assert np.allclose(_renorm([-1, 1]), [0.001998, 1.998002], atol=1e-6)


def test_renormalize_non_finite():
    with pytest.raises(NumericFailure):
        _renorm([1.0, np.inf])


def test_renormalize_keeps_floor_on_downscale():
    # the large weight forces a scale of about 0.38, which would push the first
    # two entries below the floor under a plain clamp-then-scale
    w = _renorm([-5.0, 0.0015, 10.0, 0.5])
    assert np.all(w >= 1e-3)
    assert abs(w.mean() - 1) < 1e-12


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-3, 50)))
def test_renormalize_invariants(w):
    out = _renorm(w)
    assert abs(out.mean() - 1) < 1e-9
    assert np.all(out >= 1e-3 * (1 - 1e-12))
    # order is preserved among entries that stay above the floor
    keep = out > 1e-3
    ww = np.maximum(w, 1e-3)
    assert np.all(np.diff(out[keep][np.argsort(ww[keep], kind="stable")]) >= -1e-12)


def test_renormalize_leaves_logits_alone():
    s = LabelState(np.arange(6.0).reshape(3, 2), np.array([1.0, 2.0, 3.0]))
    assert renormalize_weights(s).logits is s.logits


def test_logits_grad_from_targets_matches_fd():
    r = np.random.default_rng(2)
    z = r.normal(size=(3, 4))
    s = softmax(r.normal(size=(3, 4)), axis=1)
    w = r.uniform(0.5, 2, 3)

    def mean_loss(zz):
        return sample_loss(softmax(zz, axis=1), None, w, s=s).mean()
    analytic = logits_grad_from_targets(softmax(z, axis=1), s, w, 3)
    assert relative_error(analytic, finite_diff_grad(mean_loss, z)).max() < 1e-6


def test_state_helpers():
    s = init_label_state([1, 0, 1], 2)
    c = s.copy()
    assert c.equals(s) and c.logits is not s.logits
    s.set_writeable(False)
    with pytest.raises(ValueError):
        s.weights[0] = 5
    s.set_writeable(True)
    assert (s.num_samples, s.num_classes) == (3, 2)


def test_snapshot_round_trip(tmp_path):
    r = np.random.default_rng(0)
    s = LabelState(r.normal(size=(4, 3)), r.uniform(0.1, 2, 4))
    ids = ["a", "bé", "utt#dup1", ""]
    save_snapshot(s, ids, tmp_path / "s.rls")
    ids2, back = load_snapshot(tmp_path / "s.rls")
    assert ids2 == ids
    assert np.array_equal(back.logits, s.logits.astype(np.float32))
    assert np.array_equal(back.weights, s.weights.astype(np.float32))
    assert (tmp_path / "s.rls").read_bytes().startswith(b"RLS1 C=3 N=4\n")


def test_snapshot_errors(tmp_path):
    s = init_label_state([0, 1], 2)
    with pytest.raises(InvalidArgument):
        save_snapshot(s, ["only-one"], tmp_path / "x.rls")
    save_snapshot(s, ["a", "b"], tmp_path / "x.rls")
    blob = (tmp_path / "x.rls").read_bytes()
    (tmp_path / "t.rls").write_bytes(blob[:-3])
    with pytest.raises(SchemaError):
        load_snapshot(tmp_path / "t.rls")
    (tmp_path / "h.rls").write_bytes(b"NOPE\n" + blob)
    with pytest.raises(SchemaError):
        load_snapshot(tmp_path / "h.rls")
    (tmp_path / "x2.rls").write_bytes(blob + b"\0")
    with pytest.raises(SchemaError):
        load_snapshot(tmp_path / "x2.rls")
