"""
Pixel agreement metrics: Cohen's kappa (unweighted and quadratic),
accuracy and intersection over union, all computed from a contingency
table n[a][b] of (prediction a, reference b) pixel pairs.
"""

import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ratervar.exception.exception import (
    MetricError,
    ShapeError,
    UndefinedKappaError,
    check_class_ids,
)
from ratervar.misc.utils import IGNORE_LABEL, get_logger

WEIGHTINGS = ("none", "quadratic")
DEGENERATE_TOL = 1e-15


@dataclass
class Contingency:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def __add__(self, other: "Contingency") -> "Contingency":
        if self.counts.shape != other.counts.shape:
            raise ShapeError(
                f"cannot add contingencies of shape {self.counts.shape} and {other.counts.shape}"
            )
        return Contingency(self.counts + other.counts)

    @property
    def T(self) -> "Contingency":
        return Contingency(self.counts.T.copy())


def contingency(
    pred: np.ndarray,
    ref: np.ndarray,
    numClasses: int,
    ignoreLabel: Optional[int] = IGNORE_LABEL,
) -> Contingency:
    """
    Count (prediction, reference) class pairs over all pixels where the
    reference (and the prediction) is annotated.

    Examples
    --------
    >>> import numpy as np
    >>> contingency(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [1, 1]]), 2).counts
    array([[1, 1],
           [0, 2]])
    """
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ in shape")
    if ignoreLabel is None:
        keep = np.ones(ref.shape, dtype=bool)
        ignoreLabel = -1
    else:
        keep = (ref != ignoreLabel) & (pred != ignoreLabel)
    check_class_ids(pred, numClasses, ignoreLabel)
    check_class_ids(ref, numClasses, ignoreLabel)
    a = pred[keep].astype(np.int64)
    b = ref[keep].astype(np.int64)
    counts = np.bincount(a * numClasses + b, minlength=numClasses * numClasses)
    return Contingency(counts.reshape(numClasses, numClasses))


def _proportions(cont: Contingency) -> np.ndarray:
    if cont.total == 0:
        raise MetricError("empty contingency: no annotated pixel pairs")
    return cont.counts.astype(np.float64) / cont.total


def kappa(cont: Contingency, weighting: str = "none") -> float:
    """
    Cohen's kappa.

    Parameters
    ----------
        cont : Contingency
        weighting : str, default='none'
            'none' for kappa = (p_o - p_e) / (1 - p_e); 'quadratic' for
            kappa = 1 - sum(w * observed) / sum(w * expected) with
            w_ab = (a - b)^2 / (C - 1)^2.

    Returns
    -------
        kappa : float
            In [-1, 1].

    Raises
    ------
        MetricError
            On an empty contingency.
        UndefinedKappaError
            When chance agreement is total (a single class on both sides)
            but agreement is not perfect. Perfect agreement yields 1.0.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    n = _proportions(cont)
    row = n.sum(axis=1)
    col = n.sum(axis=0)
    expected = np.outer(row, col)
    if weighting == "none" or cont.num_classes < 2:
        po = np.trace(n)
        pe = np.trace(expected)
        if 1.0 - pe <= DEGENERATE_TOL:
            if po >= 1.0 - DEGENERATE_TOL:
                return 1.0
            raise UndefinedKappaError("chance agreement is 1 but observed agreement is not")
        return float((po - pe) / (1.0 - pe))

    C = cont.num_classes
    a, b = np.indices((C, C))
    w = (a - b) ** 2 / (C - 1) ** 2
    observed = float((w * n).sum())
    chance = float((w * expected).sum())
    if chance <= DEGENERATE_TOL:
        if observed <= DEGENERATE_TOL:
            return 1.0
        raise UndefinedKappaError("expected weighted disagreement is 0")
    return 1.0 - observed / chance


def accuracy(cont: Contingency) -> float:
    n = _proportions(cont)
    return float(np.trace(n))


def iou(cont: Contingency):
    """
    Per-class IoU_c = n_cc / (row_c + col_c - n_cc) and their mean.
    Classes absent from both prediction and reference are NaN in the
    vector and excluded from the mean.
    """
    counts = cont.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        perClass = np.where(union > 0, tp / union, np.nan)
    present = union > 0
    mean = float(perClass[present].mean()) if np.any(present) else float("nan")
    return perClass, mean


@dataclass
class AgreementScores:
    kappa_unweighted: float
    kappa_quadratic: float
    accuracy: float
    mean_iou: float
    per_class_iou: np.ndarray
    pixels: int = 0

    def as_row(self) -> dict:
        row = {
            "kappa_unweighted": self.kappa_unweighted,
            "kappa_quadratic": self.kappa_quadratic,
            "accuracy": self.accuracy,
            "mean_iou": self.mean_iou,
        }
        row.update({f"iou_{c}": v for c, v in enumerate(self.per_class_iou)})
        return row


def safe_kappa(cont: Contingency, weighting: str) -> float:
    try:
        return kappa(cont, weighting)
    except UndefinedKappaError as err:
        get_logger("ratervar.metrics.agreement").warning(f"{err}; reporting NaN")
        return float("nan")


def scores(cont: Contingency) -> AgreementScores:
    perClass, meanIou = iou(cont)
    return AgreementScores(
        kappa_unweighted=safe_kappa(cont, "none"),
        kappa_quadratic=safe_kappa(cont, "quadratic"),
        accuracy=accuracy(cont),
        mean_iou=meanIou,
        per_class_iou=perClass,
        pixels=cont.total,
    )


def evaluate(
    preds: Sequence[Optional[np.ndarray]],
    refs: Sequence[Optional[np.ndarray]],
    numClasses: int,
    mode: str = "pooled",
    ignoreLabel: int = IGNORE_LABEL,
) -> AgreementScores:
    """
    Dataset level agreement between paired prediction and reference maps.
    Pairs with a missing side are skipped.

    Parameters
    ----------
        preds, refs : Sequence of np.ndarray or None
        numClasses : int
        mode : str, default='pooled'
            'pooled' sums one contingency over all pixels; 'per_image'
            averages each metric over the images where it is defined.
        ignoreLabel : int, default=255

    Returns
    -------
        scores : AgreementScores

    Raises
    ------
        MetricError
            If no annotated pixel pair exists.
    """
    if len(preds) != len(refs):
        raise ShapeError(f"{len(preds)} predictions for {len(refs)} references")
    conts: List[Contingency] = [
        contingency(p, r, numClasses, ignoreLabel)
        for p, r in zip(preds, refs)
        if p is not None and r is not None
    ]
    conts = [c for c in conts if c.total > 0]
    if not conts:
        raise MetricError("empty contingency: no annotated pixel pairs to evaluate")
    if mode == "pooled":
        return scores(sum(conts[1:], conts[0]))
    if mode != "per_image":
        raise ValueError(f"mode must be 'pooled' or 'per_image', got {mode!r}")

    each = [scores(c) for c in conts]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        perClass = np.nanmean(np.stack([s.per_class_iou for s in each]), axis=0)
    return AgreementScores(
        kappa_unweighted=_nanmean([s.kappa_unweighted for s in each]),
        kappa_quadratic=_nanmean([s.kappa_quadratic for s in each]),
        accuracy=_nanmean([s.accuracy for s in each]),
        mean_iou=_nanmean([s.mean_iou for s in each]),
        per_class_iou=perClass,
        pixels=sum(c.total for c in conts),
    )


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    return float(values.mean()) if values.size else float("nan")
