from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ratervar.autodiff.tensor import Tensor
from ratervar.exception.exception import NumericalError, ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    """
    Moments and step counts keyed by parameter name. A parameter gets its
    entries on the first update that carries a gradient for it.
    """

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON

    @property
    def step(self) -> int:
        return max(self.steps.values(), default=0)


def adam_update(
    params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState, lr: float
) -> Dict[str, Tensor]:
    """
    One bias-corrected Adam step, applied in place to every parameter that
    has an entry in ``grads``.

    Parameters
    ----------
        params : Dict[str, Tensor]
            Leaf tensors keyed by name.
        grads : Dict[str, np.ndarray]
            Gradients keyed like ``params``; parameters without a gradient
            are left untouched, moments included.
        state : AdamState
            Updated in place.
        lr : float

    Returns
    -------
        params : Dict[str, Tensor]
            The same mapping, updated.

    Raises
    ------
        NumericalError
            If any gradient is non-finite. Nothing is updated in that case.
        ShapeError
            If a gradient does not match its parameter's shape.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if grad.shape != params[name].shape:
            raise ShapeError(
                f"gradient of {name!r} has shape {grad.shape}, parameter has {params[name].shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")

    b1, b2 = state.beta1, state.beta2
    for name, grad in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.steps[name] = 0
        state.steps[name] += 1
        t = state.steps[name]
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * grad
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * grad * grad
        mHat = m / (1 - b1**t)
        vHat = v / (1 - b2**t)
        p.data -= (lr * mHat / (np.sqrt(vHat) + state.eps)).astype(p.dtype)
    return params


@dataclass
class OptimizerState:
    """Separate Adam states for the network and latent parameter groups."""

    net: AdamState = field(default_factory=AdamState)
    latent: AdamState = field(default_factory=AdamState)
    epoch: int = 0
