import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import confusion_reference, fd_grad, max_rel_err
from veinseg.losses import ConfusionCounts, UndefinedRateError, confusion, dice_loss, dice_loss_grad, metrics
from veinseg.tensor import ShapeError, Tensor4


def _t(arr):
    return Tensor4(np.asarray(arr, dtype=np.float64).reshape(1, 1, 1, -1))


def test_dice_perfect_binary_prediction_is_zero():
    t = _t([1, 0, 1, 1, 0])
    assert dice_loss(t, t) == 0.0


def test_dice_half_prediction_example():
    pred = _t([0.5] * 8)
    target = _t([1, 1, 1, 1, 0, 0, 0, 0])
    assert dice_loss(pred, target, smooth=1.0) == pytest.approx(4.0 / 9.0, abs=1e-12)


def test_dice_disjoint_prediction():
    pred = _t([1, 0, 0, 0])
    target = _t([0, 1, 1, 0])
    s = 2.0
    assert dice_loss(pred, target, smooth=s) == pytest.approx(1.0 - s / (1 + 2 + s), abs=1e-12)


def test_dice_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_loss(_t([1, 0]), _t([1, 0, 0]))


def test_dice_non_binary_target():
    with pytest.raises(ValueError, match="binary"):
        dice_loss(_t([0.5, 0.5]), _t([0.5, 1.0]))


def test_dice_non_positive_smooth():
    with pytest.raises(ValueError, match="smooth"):
        dice_loss(_t([1.0]), _t([1.0]), smooth=0.0)


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=16),
       st.lists(st.integers(0, 1), min_size=2, max_size=16))
def test_dice_in_unit_interval(pred, target):
    n = min(len(pred), len(target))
    loss = dice_loss(_t(pred[:n]), _t([float(v) for v in target[:n]]))
    assert 0.0 <= loss < 1.0


def test_dice_symmetric_under_spatial_permutation():
    rng = np.random.default_rng(0)
    pred = rng.random(12)
    target = (rng.random(12) > 0.5).astype(float)
    perm = rng.permutation(12)
    a = dice_loss(_t(pred), _t(target))
    b = dice_loss(_t(pred[perm]), _t(target[perm]))
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_dice_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random((1, 1, 4, 4)) * 0.9 + 0.05
    target = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)

    def loss():
        return dice_loss(Tensor4(pred), Tensor4(target))

    g = dice_loss_grad(Tensor4(pred), Tensor4(target))
    assert max_rel_err(g.array, fd_grad(loss, pred)) <= 1e-6


def test_dice_grad_per_sample_matches_fd():
    rng = np.random.default_rng(9)
    pred = rng.random((3, 1, 4, 4)) * 0.9 + 0.05
    target = (rng.random((3, 1, 4, 4)) > 0.5).astype(np.float64)

    def loss():
        return dice_loss(Tensor4(pred), Tensor4(target), per_sample=True)

    g = dice_loss_grad(Tensor4(pred), Tensor4(target), per_sample=True)
    assert max_rel_err(g.array, fd_grad(loss, pred)) <= 1e-6


def test_dice_grad_sign_at_perfect_prediction():
    target = _t([1, 1, 0, 0, 1])
    g = dice_loss_grad(target, target).array.reshape(-1)
    assert np.all(g[np.array([0, 1, 4])] <= 0)  # true positives cannot benefit from shrinking


def test_dice_grad_all_negative_target_pushes_down():
    pred = _t([0.3, 0.6, 0.1, 0.9])
    target = _t([0, 0, 0, 0])
    g = dice_loss_grad(pred, target, smooth=1.0)
    assert np.all(g.array > 0)


def test_confusion_worked_example():
    pred = _t([0.9, 0.6, 0.4, 0.2, 0.2, 0.1, 0.7, 0.3])
    target = _t([1, 1, 1, 0, 0, 0, 0, 0])
    c = confusion(pred, target, threshold=0.5)
    assert (c.tp, c.fn, c.fp, c.tn) == (2, 1, 1, 4)


def test_confusion_exact_prediction():
    t = _t([1, 0, 1, 0, 0])
    c = confusion(t, t, threshold=0.5)
    assert c.fp == 0 and c.fn == 0


def test_confusion_threshold_is_strict():
    pred = _t([0.5, 0.5])
    target = _t([1, 0])
    c = confusion(pred, target, threshold=0.5)
    assert c.tp == 0 and c.fn == 1 and c.tn == 1


@pytest.mark.parametrize("seed", range(6))
def test_confusion_matches_pixel_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random((2, 1, 5, 7))
    target = (rng.random((2, 1, 5, 7)) > 0.4).astype(np.float64)
    thr = float(rng.uniform(0.2, 0.8))
    c = confusion(Tensor4(pred), Tensor4(target), thr)
    assert (c.tp, c.fp, c.tn, c.fn) == tuple(
        confusion_reference(pred, target, thr)[i] for i in (0, 1, 2, 3))


def test_metrics_worked_example():
    acc, tpr, tnr = metrics(ConfusionCounts(tp=2, fp=1, tn=4, fn=1))
    assert acc == 0.75
    assert tpr == pytest.approx(2 / 3)
    assert tnr == pytest.approx(0.8)


def test_metrics_perfect():
    assert metrics(ConfusionCounts(tp=5, fp=0, tn=7, fn=0)) == (1.0, 1.0, 1.0)


def test_metrics_undefined_tpr():
    with pytest.raises(UndefinedRateError, match="TPR"):
        metrics(ConfusionCounts(tp=0, fp=1, tn=3, fn=0))


def test_metrics_undefined_tnr():
    with pytest.raises(UndefinedRateError, match="TNR"):
        metrics(ConfusionCounts(tp=2, fp=0, tn=0, fn=1))


@settings(max_examples=200)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_metrics_accuracy_is_prevalence_weighted_mix(tp, fp, tn, fn):
    from fractions import Fraction

    if tp + fn == 0 or tn + fp == 0:
        return
    acc, tpr, tnr = metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
    p = tp + fn
    n = tn + fp
    # the identity holds exactly in rational arithmetic ...
    assert Fraction(tp + tn, p + n) == (p * Fraction(tp, p) + n * Fraction(tn, n)) / (p + n)
    # ... and the returned floats are the directly rounded ratios
    assert acc == (tp + tn) / (p + n)
    assert tpr == tp / p and tnr == tn / n
    assert 0.0 <= acc <= 1.0 and 0.0 <= tpr <= 1.0 and 0.0 <= tnr <= 1.0
