"""
Label fusion: per-pixel majority vote and multi-class STAPLE.

STAPLE models each rater r by a row-stochastic confusion matrix
theta_r[true][observed] and the true labels by a spatially uniform class
prior pi. Expectation maximization alternates

    E:  W_p(c) ~ pi(c) * prod_{r observing p} theta_r[c][s_p^r]
    M:  theta_r[c][c'] = sum_p W_p(c) 1[s_p^r = c'] / sum_p W_p(c)
        pi = mean_p W_p

where the sums for rater r only run over pixels that rater annotated.
Masks of any shape are accepted; pixels are flattened internally.
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from ratervar.exception.exception import PreconditionError, ShapeError, check_class_ids
from ratervar.misc.utils import IGNORE_LABEL, get_logger
from ratervar.warn.warnings import ConvergenceWarning

INIT_CONFIDENCE = 0.9
LAPLACE = 1e-6
EMPTY_ROW = 1e-12

MaskList = Union[Sequence[Optional[np.ndarray]], Dict[int, Optional[np.ndarray]]]


def _as_mask_list(masks: MaskList) -> List[Optional[np.ndarray]]:
    if isinstance(masks, dict):
        if not masks:
            return list()
        return [masks.get(r) for r in range(max(masks) + 1)]
    return list(masks)


def _check_shapes(masks: List[Optional[np.ndarray]]):
    shapes = {m.shape for m in masks if m is not None}
    if len(shapes) > 1:
        raise ShapeError(f"all masks must share one shape, got {sorted(shapes)}")
    if not shapes:
        raise PreconditionError("no masks to fuse")
    return shapes.pop()


def vote_counts(masks: MaskList, numClasses: int, ignoreLabel: int = IGNORE_LABEL) -> np.ndarray:
    """(C, *shape) count of raters voting for each class."""
    masks = [m for m in _as_mask_list(masks) if m is not None]
    shape = _check_shapes(masks)
    counts = np.zeros((numClasses,) + shape, dtype=np.int64)
    for mask in masks:
        check_class_ids(mask, numClasses, ignoreLabel)
        for c in range(numClasses):
            counts[c] += mask == c
    return counts


def majority_vote(
    masks: MaskList, numClasses: Optional[int] = None, ignoreLabel: int = IGNORE_LABEL
) -> np.ndarray:
    """
    Per-pixel modal class. Ties go to the smallest class index; pixels no
    rater annotated get the ignore label.

    Examples
    --------
    >>> import numpy as np
    >>> majority_vote([np.array([[2]]), np.array([[3]])], numClasses=4)
    array([[2]], dtype=uint8)
    """
    present = [m for m in _as_mask_list(masks) if m is not None]
    _check_shapes(present)
    if numClasses is None:
        labels = np.concatenate([m[m != ignoreLabel].ravel() for m in present])
        numClasses = int(labels.max()) + 1 if labels.size else 1
    counts = vote_counts(present, numClasses, ignoreLabel)
    fused = counts.argmax(axis=0).astype(np.uint8)
    fused[counts.sum(axis=0) == 0] = ignoreLabel
    return fused


@dataclass
class ConfusionModel:
    """
    theta : (R, C, C) row-stochastic matrices theta[r][true][observed].
    prior : (C,) class prior.
    """

    theta: np.ndarray
    prior: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        R, C, _ = self.theta.shape
        rows = list()
        for r in range(R):
            for c in range(C):
                row = {"rater": r, "true_class": c}
                row.update({f"observed_{k}": self.theta[r, c, k] for k in range(C)})
                rows.append(row)
        return pd.DataFrame(rows)


@dataclass
class StapleResult:
    posterior: np.ndarray
    fused: np.ndarray
    confusion: ConfusionModel
    log_likelihoods: List[float] = field(default_factory=list)
    converged: bool = True

    @property
    def iterations(self) -> int:
        return len(self.log_likelihoods)


def _m_step(W: np.ndarray, observed: List[np.ndarray], numClasses: int):
    """
    W is (P, C); observed[r] is a (P,) array of class ids with -1 where the
    rater gave no label.
    """
    R = len(observed)
    theta = np.empty((R, numClasses, numClasses))
    smoothed = 0
    for r, obs in enumerate(observed):
        seen = obs >= 0
        Wr = W[seen]
        onehot = np.eye(numClasses)[obs[seen]]
        numer = Wr.T @ onehot
        mass = Wr.sum(axis=0)
        empty = mass < EMPTY_ROW
        if np.any(empty):
            smoothed += int(empty.sum())
            numer[empty] += LAPLACE
            mass[empty] += numClasses * LAPLACE
        theta[r] = numer / mass[:, None]
    observedAny = np.any(np.stack(observed) >= 0, axis=0)
    prior = W[observedAny].mean(axis=0)
    return theta, prior, smoothed


def _log_joint(theta: np.ndarray, prior: np.ndarray, observed: List[np.ndarray]) -> np.ndarray:
    """(P, C) array of ln pi(c) + sum_r ln theta_r[c][s_p^r]."""
    with np.errstate(divide="ignore"):
        logJoint = np.tile(np.log(prior), (observed[0].size, 1))
        for r, obs in enumerate(observed):
            seen = obs >= 0
            logTheta = np.log(theta[r])
            logJoint[seen] += logTheta[:, obs[seen]].T
    return logJoint


def staple_fuse(
    masks: MaskList,
    numClasses: int,
    max_iters: int = 50,
    tol: float = 1e-6,
    ignoreLabel: int = IGNORE_LABEL,
) -> StapleResult:
    """
    Multi-class STAPLE.

    Parameters
    ----------
        masks : sequence or dict of np.ndarray or None
            One mask per rater (None when the rater annotated nothing). The
            ignore label marks unannotated pixels.
        numClasses : int
        max_iters : int, default=50
        tol : float, default=1e-6
            Stop once no confusion entry moves by more than this.
        ignoreLabel : int, default=255

    Returns
    -------
        result : StapleResult
            posterior (C, *shape), fused argmax map (ignore label where no
            rater annotated), confusion model and the observed-data
            log-likelihood after every E-step.

    Raises
    ------
        PreconditionError
            If fewer than two raters annotated at least one pixel.
        ShapeError
            If mask shapes differ.
    """
    logger = get_logger("ratervar.fusion.staple")
    maskList = _as_mask_list(masks)
    shape = _check_shapes(maskList)
    observed = list()
    for mask in maskList:
        if mask is None:
            observed.append(np.full(int(np.prod(shape)), -1, dtype=np.int64))
            continue
        check_class_ids(mask, numClasses, ignoreLabel)
        flat = mask.ravel().astype(np.int64)
        observed.append(np.where(flat == ignoreLabel, -1, flat))
    active = sum(1 for obs in observed if np.any(obs >= 0))
    if active < 2:
        raise PreconditionError(f"STAPLE needs at least 2 raters with annotations, got {active}")

    observedAny = np.any(np.stack(observed) >= 0, axis=0)
    counts = np.zeros((observedAny.size, numClasses))
    for obs in observed:
        seen = obs >= 0
        counts[np.flatnonzero(seen), obs[seen]] += 1
    vote = counts.argmax(axis=1)
    W = INIT_CONFIDENCE * np.eye(numClasses)[vote] + (1 - INIT_CONFIDENCE) / numClasses

    theta, prior, smoothed = _m_step(W, observed, numClasses)
    logLikelihoods = list()
    converged = False
    for _ in range(max_iters):
        logJoint = _log_joint(theta, prior, observed)
        norm = logsumexp(logJoint, axis=1, keepdims=True)
        impossible = ~np.isfinite(norm[:, 0])
        with np.errstate(invalid="ignore"):
            W = np.exp(logJoint - norm)
        if np.any(impossible):
            W[impossible] = prior
        logLikelihoods.append(float(norm[observedAny & ~impossible].sum()))

        newTheta, prior, smoothed = _m_step(W, observed, numClasses)
        delta = np.max(np.abs(newTheta - theta))
        theta = newTheta
        if delta < tol:
            converged = True
            break

    if smoothed:
        logger.warning(f"Laplace-smoothed {smoothed} confusion row(s) with no posterior mass")
    if not converged:
        warnings.warn(
            f"STAPLE stopped after {max_iters} iterations without reaching tol={tol}",
            ConvergenceWarning,
        )
        logger.warning(f"STAPLE did not converge in {max_iters} iterations")
    else:
        logger.info(f"STAPLE converged after {len(logLikelihoods)} iterations")

    posterior = W.T.reshape((numClasses,) + shape)
    fused = W.argmax(axis=1).astype(np.uint8)
    fused[~observedAny] = ignoreLabel
    return StapleResult(
        posterior=posterior,
        fused=fused.reshape(shape),
        confusion=ConfusionModel(theta, prior),
        log_likelihoods=logLikelihoods,
        converged=converged,
    )


def staple_dataset(dataset, **kwargs):
    """
    STAPLE over the pooled pixels of every image of a MultiRaterDataset,
    so rater performance is estimated dataset wide.

    Returns
    -------
        fused : Dict[str, np.ndarray]
            uint8 masks keyed by image id; 255 where no rater annotated.
        result : StapleResult
            Posterior and fused map over the concatenated pixels.
    """
    ids = dataset.image_ids
    sizes = [int(np.prod(dataset.images[i].shape[:2])) for i in ids]
    pooled = list()
    for r in range(dataset.num_raters):
        parts = list()
        for imageId, size in zip(ids, sizes):
            mask = dataset.masks.get((imageId, r))
            parts.append(mask.ravel() if mask is not None else np.full(size, IGNORE_LABEL, np.uint8))
        pooled.append(np.concatenate(parts))
    result = staple_fuse(pooled, dataset.num_classes, **kwargs)

    fused, offset = dict(), 0
    for imageId, size in zip(ids, sizes):
        shape = dataset.images[imageId].shape[:2]
        fused[imageId] = result.fused[offset : offset + size].reshape(shape)
        offset += size
    return fused, result


def fuse_dataset(dataset, method: str = "staple", **kwargs) -> Dict[str, np.ndarray]:
    """
    Consensus masks for every image of a MultiRaterDataset.

    Parameters
    ----------
        dataset : MultiRaterDataset
        method : str, default='staple'
            'staple' or 'majority'.
        **kwargs
            Passed to staple_fuse.

    Returns
    -------
        fused : Dict[str, np.ndarray]
            uint8 masks keyed by image id; 255 where no rater annotated.
    """
    C = dataset.num_classes
    if method == "majority":
        fused = dict()
        for imageId in dataset.image_ids:
            present = [m for m in dataset.rater_masks(imageId) if m is not None]
            if present:
                fused[imageId] = majority_vote(present, C)
            else:
                fused[imageId] = np.full(dataset.images[imageId].shape[:2], IGNORE_LABEL, np.uint8)
        return fused
    if method != "staple":
        raise ValueError(f"unknown fusion method {method!r}, expected 'staple' or 'majority'")
    fused, _ = staple_dataset(dataset, **kwargs)
    return fused


def derive_gold(dataset, method: str = "staple", **kwargs) -> Dict[str, np.ndarray]:
    """Consensus labels used as gold when a dataset ships without them."""
    get_logger("ratervar.fusion.staple").info(
        f"Deriving gold labels by {method} over {len(dataset)} images"
    )
    return fuse_dataset(dataset, method=method, **kwargs)
