import numpy as np
import pytest


def _scalar_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_three_scalar_steps():
    from ratervar.autodiff.tensor import Tensor
    from ratervar.train.adam import AdamState, adam_update

    p = Tensor.parameter([1.0], dtype=np.float64)
    state = AdamState()
    grads = [0.5, -1.0, 2.0]
    for g in grads:
        adam_update({"p": p}, {"p": np.array([g])}, state, lr=0.1)
    assert p.data[0] == pytest.approx(_scalar_adam(1.0, grads, 0.1), rel=1e-12)
    assert state.steps["p"] == 3 and state.step == 3


def test_first_step_moves_by_lr():
    from ratervar.autodiff.tensor import Tensor
    from ratervar.train.adam import AdamState, adam_update

    p = Tensor.parameter([1.0, 1.0], dtype=np.float64)
    adam_update({"p": p}, {"p": np.array([3.0, -0.01])}, AdamState(), lr=0.01)
    assert np.allclose(p.data, [0.99, 1.01], atol=1e-6)


def test_missing_gradient_leaves_parameter_alone():
    from ratervar.autodiff.tensor import Tensor
    from ratervar.train.adam import AdamState, adam_update

    a = Tensor.parameter([1.0], dtype=np.float64)
    b = Tensor.parameter([2.0], dtype=np.float64)
    state = AdamState()
    adam_update({"a": a, "b": b}, {"a": np.array([1.0])}, state, lr=0.1)
    adam_update({"a": a, "b": b}, {"a": np.array([1.0]), "b": np.array([1.0])}, state, lr=0.1)
    assert state.steps == {"a": 2, "b": 1}
    # b saw its first step, so it moved by lr exactly
    assert b.data[0] == pytest.approx(1.9, abs=1e-6)


def test_non_finite_gradient_updates_nothing():
    from ratervar.autodiff.tensor import Tensor
    from ratervar.exception.exception import NumericalError
    from ratervar.train.adam import AdamState, adam_update

    a = Tensor.parameter([1.0], dtype=np.float64)
    b = Tensor.parameter([2.0], dtype=np.float64)
    state = AdamState()
    with pytest.raises(NumericalError):
        adam_update({"a": a, "b": b}, {"a": np.array([1.0]), "b": np.array([np.inf])}, state, 0.1)
    assert a.data[0] == 1.0 and not state.m


def test_gradient_shape_mismatch():
    from ratervar.autodiff.tensor import Tensor
    from ratervar.exception.exception import ShapeError
    from ratervar.train.adam import AdamState, adam_update

    a = Tensor.parameter([1.0, 2.0], dtype=np.float64)
    with pytest.raises(ShapeError):
        adam_update({"a": a}, {"a": np.zeros(3)}, AdamState(), 0.1)
    with pytest.raises(ShapeError):
        adam_update({"a": a}, {"c": np.zeros(2)}, AdamState(), 0.1)
