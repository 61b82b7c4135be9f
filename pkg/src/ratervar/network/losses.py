"""
Likelihood losses over (N, C, H, W) probability maps. Pixels carrying the
ignore label are masked out of both losses.
"""

from typing import Optional, Tuple

import numpy as np

from ratervar.autodiff import ops
from ratervar.autodiff.tensor import Tensor, as_tensor
from ratervar.exception.exception import PreconditionError, ShapeError, check_class_ids
from ratervar.misc.utils import IGNORE_LABEL

GDL_EPSILON = 1e-6
PROBABILITY_FLOOR = 1e-7


def one_hot(
    labels: np.ndarray, numClasses: int, ignoreLabel: int = IGNORE_LABEL, dtype=np.float32
) -> Tuple[Tensor, np.ndarray]:
    """
    One-hot encode an (N, H, W) label array.

    Parameters
    ----------
        labels : np.ndarray
            Integer class ids; ``ignoreLabel`` marks unannotated pixels.
        numClasses : int
            Number of classes C.
        ignoreLabel : int, default=255
        dtype : numpy dtype, default=np.float32

    Returns
    -------
        target : Tensor
            Shape (N, C, H, W); ignored pixels are all zero.
        valid : np.ndarray
            Shape (N, 1, H, W); 1 where the pixel is annotated.
    """
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ShapeError(f"labels must be (N, H, W), got shape {labels.shape}")
    check_class_ids(labels, numClasses, ignoreLabel)
    valid = labels != ignoreLabel
    classes = np.arange(numClasses).reshape(1, numClasses, 1, 1)
    target = (labels[:, None] == classes) & valid[:, None]
    return Tensor(target.astype(dtype)), valid[:, None].astype(dtype)


def _check_target(probs: Tensor, target: Tensor, valid: Optional[np.ndarray]):
    if probs.shape != target.shape:
        raise ShapeError(f"probs {probs.shape} and target {target.shape} differ in shape")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        raise PreconditionError("target must be one-hot (entries 0 or 1)")
    perPixel = t.sum(axis=1, keepdims=True)
    expected = 1 if valid is None else valid
    if not np.all(perPixel == expected):
        raise PreconditionError("target must hold exactly one class per annotated pixel")


def generalized_dice_loss(
    probs: Tensor,
    target,
    valid: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Generalized dice loss

        GDL = 1 - 2 * sum_c w_c sum_p probs * target / sum_c w_c sum_p (probs + target)

    with w_c = 1 / (eps + (sum_p target_c)^2) and eps = 1e-6. A class absent
    from the target gets weight 1 / eps, so any probability spent on it
    drives the loss towards 1.

    Parameters
    ----------
        probs : Tensor
            (N, C, H, W) class probabilities.
        target : Tensor or np.ndarray
            One-hot target of the same shape.
        valid : np.ndarray, optional
            (N, 1, H, W) annotation mask; probabilities of unannotated
            pixels are dropped before the sums.

    Returns
    -------
        loss : Tensor
            Scalar in [0, 1].
    """
    target = as_tensor(target, probs.dtype)
    _check_target(probs, target, valid)
    if valid is not None:
        if not np.any(valid):
            return Tensor(np.zeros((), dtype=probs.dtype))
        probs = probs * valid

    volume = target.data.sum(axis=(0, 2, 3), dtype=np.float64)
    weights = 1.0 / (GDL_EPSILON + volume**2)
    w = weights.astype(probs.dtype)

    intersection = (probs * target).sum(axis=(0, 2, 3))
    denominator = (probs + target).sum(axis=(0, 2, 3))
    return 1.0 - 2.0 * (intersection * w).sum() / (denominator * w).sum()


def cross_entropy_loss(probs: Tensor, target, valid: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean over annotated pixels of -ln probs[true class], with probabilities
    floored at 1e-7.
    """
    target = as_tensor(target, probs.dtype)
    _check_target(probs, target, valid)
    picked = ops.clamp_min((probs * target).sum(axis=1), PROBABILITY_FLOOR)
    nll = -ops.log(picked)
    if valid is None:
        return nll.mean()
    mask = valid[:, 0]
    count = float(mask.sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=probs.dtype))
    return (nll * mask).sum() * (1.0 / count)


LOSSES = {
    "dice": generalized_dice_loss,
    "cross_entropy": cross_entropy_loss,
}
