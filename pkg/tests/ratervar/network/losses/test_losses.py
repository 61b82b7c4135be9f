import numpy as np
import pytest


def _probs(data):
    from ratervar.autodiff.tensor import Tensor

    return Tensor.parameter(np.asarray(data, dtype=np.float64), dtype=np.float64)


def test_one_hot_marks_ignored_pixels():
    from ratervar.network.losses import one_hot

    labels = np.array([[[0, 1], [255, 2]]])
    target, valid = one_hot(labels, 3)
    assert target.shape == (1, 3, 2, 2)
    assert np.array_equal(valid[0, 0], [[1, 1], [0, 1]])
    assert np.array_equal(target.data[0, :, 1, 0], [0, 0, 0])
    assert np.array_equal(target.data[0, :, 1, 1], [0, 0, 1])


def test_one_hot_rejects_bad_ids():
    from ratervar.exception.exception import DataFormatError, ShapeError
    from ratervar.network.losses import one_hot

    with pytest.raises(DataFormatError):
        one_hot(np.array([[[0, 3]]]), 3)
    with pytest.raises(ShapeError):
        one_hot(np.zeros((2, 2)), 3)


def test_dice_perfect_and_disjoint():
    from ratervar.network.losses import generalized_dice_loss, one_hot

    labels = np.array([[[0, 1], [1, 1]]])
    target, _ = one_hot(labels, 2, dtype=np.float64)
    assert generalized_dice_loss(_probs(target.data), target).item() == pytest.approx(0.0, abs=1e-6)
    assert generalized_dice_loss(_probs(1.0 - target.data), target).item() == pytest.approx(1.0, abs=1e-6)


def test_dice_hand_value():
    from ratervar.network.losses import generalized_dice_loss

    # one pixel of class 0, one of class 1; uniform prediction
    target = np.zeros((1, 2, 1, 2))
    target[0, 0, 0, 0] = target[0, 1, 0, 1] = 1
    probs = np.full((1, 2, 1, 2), 0.5)
    # both weights ~1: 1 - 2 * (0.5 + 0.5) / (2 + 2)
    assert generalized_dice_loss(_probs(probs), target).item() == pytest.approx(0.5, abs=1e-5)


def _dice_reference(probs, target):
    volume = target.sum(axis=(0, 2, 3))
    w = 1.0 / (1e-6 + volume**2)
    num = 2.0 * (w * (probs * target).sum(axis=(0, 2, 3))).sum()
    return 1.0 - num / (w * (probs + target).sum(axis=(0, 2, 3))).sum()


def test_dice_absent_class_weight():
    from ratervar.network.losses import generalized_dice_loss

    target = np.zeros((1, 2, 2, 2))
    target[0, 0] = 1
    probs = np.zeros((1, 2, 2, 2))
    probs[0, 0], probs[0, 1] = 0.99, 0.01
    loss = generalized_dice_loss(_probs(probs), target).item()
    # class 1 is absent, so its weight is 1 / eps
    assert loss == pytest.approx(_dice_reference(probs, target), rel=1e-12)
    assert loss > 0.9999


def test_dice_matches_formula_and_relabelling(rng):
    from ratervar.network.losses import generalized_dice_loss, one_hot

    labels = rng.integers(0, 4, size=(2, 6, 6))
    labels[0, 0, :4] = np.arange(4)
    target, _ = one_hot(labels, 4, dtype=np.float64)
    logits = rng.normal(size=(2, 4, 6, 6))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    loss = generalized_dice_loss(_probs(probs), target).item()
    assert loss == pytest.approx(_dice_reference(probs, target.data), rel=1e-12)

    perm = np.array([2, 0, 3, 1])
    relabelled, _ = one_hot(np.argsort(perm)[labels], 4, dtype=np.float64)
    assert np.array_equal(relabelled.data, target.data[:, perm])
    assert generalized_dice_loss(_probs(probs[:, perm]), relabelled).item() == pytest.approx(loss, rel=1e-12)


def test_dice_ignores_unannotated_pixels():
    from ratervar.network.losses import generalized_dice_loss, one_hot

    labels = np.array([[[0, 255], [1, 255]]])
    target, valid = one_hot(labels, 2, dtype=np.float64)
    probs = np.zeros((1, 2, 2, 2))
    probs[0, 0, 0, 0] = probs[0, 1, 1, 0] = 1.0
    probs[0, :, :, 1] = 0.5
    assert generalized_dice_loss(_probs(probs), target, valid).item() == pytest.approx(0.0, abs=1e-6)

    empty, none = one_hot(np.full((1, 2, 2), 255), 2)
    assert generalized_dice_loss(_probs(probs), empty, none).item() == 0.0


def test_cross_entropy_value_and_gradient():
    from ratervar.autodiff.tensor import backward
    from ratervar.network.losses import cross_entropy_loss, one_hot

    target, valid = one_hot(np.array([[[0, 1, 255]]]), 2, dtype=np.float64)
    probs = _probs([[[[0.8, 0.25, 0.5]], [[0.2, 0.75, 0.5]]]])
    loss = cross_entropy_loss(probs, target, valid)
    assert loss.item() == pytest.approx(-(np.log(0.8) + np.log(0.75)) / 2)
    grad = backward(loss)[probs]
    assert grad[0, 0, 0, 0] == pytest.approx(-1 / (2 * 0.8))
    assert grad[0, 1, 0, 1] == pytest.approx(-1 / (2 * 0.75))
    assert np.all(grad[:, :, :, 2] == 0)


def test_cross_entropy_floor_keeps_loss_finite():
    from ratervar.network.losses import PROBABILITY_FLOOR, cross_entropy_loss

    target = np.zeros((1, 2, 1, 1))
    target[0, 0] = 1
    probs = _probs(np.array([0.0, 1.0]).reshape(1, 2, 1, 1))
    assert cross_entropy_loss(probs, target).item() == pytest.approx(-np.log(PROBABILITY_FLOOR))


def test_target_validation():
    from ratervar.exception.exception import PreconditionError, ShapeError
    from ratervar.network.losses import LOSSES

    probs = _probs(np.full((1, 2, 1, 1), 0.5))
    for loss in LOSSES.values():
        with pytest.raises(ShapeError):
            loss(probs, np.zeros((1, 3, 1, 1)))
        with pytest.raises(PreconditionError):
            loss(probs, np.full((1, 2, 1, 1), 0.5))
        with pytest.raises(PreconditionError):
            loss(probs, np.ones((1, 2, 1, 1)))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__]))
