from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ratervar.autodiff.tensor import Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor)."""
    scale = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / scale


def numerical_gradient(
    fn: Callable[[], Tensor], tensor: Tensor, index: Tuple[int, ...], step: float = 1e-3
) -> float:
    """
    Central finite difference of the scalar ``fn()`` with respect to one
    entry of a leaf tensor. The entry is restored afterwards.
    """
    original = tensor.data[index].copy()
    try:
        tensor.data[index] = original + step
        up = float(np.asarray(fn().data, dtype=np.float64).reshape(-1)[0])
        tensor.data[index] = original - step
        down = float(np.asarray(fn().data, dtype=np.float64).reshape(-1)[0])
    finally:
        tensor.data[index] = original
    return (up - down) / (2.0 * step)


def check_gradients(
    fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    numChecks: int = 10,
    step: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
) -> List[GradCheckResult]:
    """
    Compare backward() against central differences on randomly chosen
    entries of each parameter.

    Parameters
    ----------
        fn : Callable[[], Tensor]
            Rebuilds the scalar loss from the current parameter values.
        params : Dict[str, Tensor]
            Leaf tensors to probe, keyed by name.
        numChecks : int, default=10
            Entries probed per parameter (fewer if the parameter is smaller).
        step : float, default=1e-3
            Finite-difference step.
        rng : np.random.Generator, optional
            Chooses the probed entries. Defaults to a generator seeded with 0.

    Returns
    -------
        results : List[GradCheckResult]
            One record per probed entry.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    loss = fn()
    grads = backward(loss)

    results = list()
    for name, tensor in params.items():
        analytic = grads[tensor]
        count = min(numChecks, tensor.size)
        flat = rng.choice(tensor.size, size=count, replace=False)
        for flatIndex in flat:
            index = np.unravel_index(int(flatIndex), tensor.shape)
            numeric = numerical_gradient(fn, tensor, index, step=step)
            results.append(GradCheckResult(name, index, float(analytic[index]), numeric))
    return results
