"""
Monte-Carlo prediction from a trained model and rater bank.
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from ratervar.autodiff.tensor import no_grad
from ratervar.exception.exception import PreconditionError
from ratervar.latent.gaussian import RaterBank, sample
from ratervar.misc.parallel import parallelize
from ratervar.misc.utils import get_logger
from ratervar.network.model import SegModel, extract_features, image_to_array, segment
from ratervar.warn.warnings import GoldRaterWarning

DEFAULT_SAMPLES = 16
MAX_BINARY_VARIANCE = 0.25


@dataclass
class PredictionResult:
    """
    Attributes
    ----------
        mean_probs : np.ndarray
            (C, H, W) mean of the sampled class probabilities.
        sample_maps : np.ndarray
            (K, H, W) argmax map of each sample.
        uncertainty : np.ndarray
            (H, W) across-sample probability variance averaged over classes
            and divided by 0.25, so it lies in [0, 1].
        argmax_map : np.ndarray
            (H, W) argmax of mean_probs.
        entropy : np.ndarray
            (H, W) entropy of mean_probs in nats.
        rater : int
        metadata : dict
    """

    mean_probs: np.ndarray
    sample_maps: np.ndarray
    uncertainty: np.ndarray
    argmax_map: np.ndarray
    entropy: np.ndarray
    rater: int
    metadata: Dict[str, object] = field(default_factory=dict)


def predictive_entropy(meanProbs: np.ndarray) -> np.ndarray:
    """-sum_c p_c ln p_c over the class axis (axis 0)."""
    p = np.asarray(meanProbs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=0)


def _features(model: SegModel, image: np.ndarray):
    array = image_to_array(image, model.dtype) if image.ndim == 3 and image.shape[-1] == 3 else image
    with no_grad():
        return extract_features(model, array[None])


def _sample_probs(model, bank, features, r: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """(K, C, H, W) probabilities for K latent draws of rater r."""
    if K < 1:
        raise PreconditionError(f"need at least one sample, got K={K}")
    r = bank.check_rater(r)
    probs = list()
    with no_grad():
        for eps in rng.standard_normal((K, bank.latent_dim)):
            z = sample(bank, r, eps)
            probs.append(segment(model, features, z).data[0].astype(np.float64))
    return np.stack(probs)


def _summarize(probs: np.ndarray, r: int, metadata: Dict[str, object]) -> PredictionResult:
    mean = probs.mean(axis=0)
    uncertainty = probs.var(axis=0).mean(axis=0) / MAX_BINARY_VARIANCE
    return PredictionResult(
        mean_probs=mean,
        sample_maps=probs.argmax(axis=1).astype(np.uint8),
        uncertainty=uncertainty,
        argmax_map=mean.argmax(axis=0).astype(np.uint8),
        entropy=predictive_entropy(mean),
        rater=r,
        metadata=metadata,
    )


def predict(
    model: SegModel,
    bank: RaterBank,
    image: np.ndarray,
    r: Optional[int] = None,
    K: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> PredictionResult:
    """
    Predict the segmentation of one image under q(z|r).

    Parameters
    ----------
        model : SegModel
        bank : RaterBank
        image : np.ndarray
            uint8 (H, W, 3) image or a (3, H, W) float array.
        r : int, optional
            Rater id; defaults to the gold slot.
        K : int, default=16
            Number of latent samples.
        seed : int, default=0

    Returns
    -------
        result : PredictionResult
    """
    r = bank.gold if r is None else r
    features = _features(model, np.asarray(image))
    probs = _sample_probs(model, bank, features, r, K, np.random.default_rng(seed))
    metadata = {"rater": r, "K": K, "seed": seed, "gold": r == bank.gold}
    return _summarize(probs, r, metadata)


def simulate_rater(
    model: SegModel,
    bank: RaterBank,
    image: np.ndarray,
    r: int,
    K: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> PredictionResult:
    """
    Draw K segmentations in the style of rater r; ``sample_maps`` holds the
    intra-rater variants. The gold slot is accepted with a GoldRaterWarning
    and ``metadata['gold'] = True``.
    """
    r = bank.check_rater(r)
    if r == bank.gold:
        warnings.warn(f"rater {r} is the gold slot, not a human rater", GoldRaterWarning)
    return predict(model, bank, image, r=r, K=K, seed=seed)


def blend_raters(
    model: SegModel,
    bank: RaterBank,
    image: np.ndarray,
    r1: int,
    r2: int,
    K: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> PredictionResult:
    """
    Average of the predictive distributions of two raters: K samples from
    each, mean_probs = (mean_1 + mean_2) / 2. Uncertainty and sample maps
    cover all 2K samples. Blending a rater with itself draws 2K samples of
    that rater from two independent streams.
    """
    r1, r2 = bank.check_rater(r1), bank.check_rater(r2)
    features = _features(model, np.asarray(image))
    seqs = np.random.SeedSequence(seed).spawn(2)
    probs1 = _sample_probs(model, bank, features, r1, K, np.random.default_rng(seqs[0]))
    probs2 = _sample_probs(model, bank, features, r2, K, np.random.default_rng(seqs[1]))
    result = _summarize(np.concatenate([probs1, probs2]), r1, dict())
    result.mean_probs = 0.5 * (probs1.mean(axis=0) + probs2.mean(axis=0))
    result.argmax_map = result.mean_probs.argmax(axis=0).astype(np.uint8)
    result.entropy = predictive_entropy(result.mean_probs)
    result.metadata = {"rater": r1, "blend_with": r2, "K": K, "seed": seed, "gold": False}
    return result


def predict_dataset(
    model: SegModel,
    bank: RaterBank,
    images: Dict[str, np.ndarray],
    r: Optional[int] = None,
    K: int = DEFAULT_SAMPLES,
    seed: int = 0,
    workers: int = 1,
    pbar: bool = False,
) -> Dict[str, PredictionResult]:
    """
    predict() over many images. Each image uses ``seed`` so results do not
    depend on order or worker count.
    """
    ids = sorted(images)
    get_logger("ratervar.inference.predict").info(
        f"Predicting {len(ids)} images as rater {bank.gold if r is None else r} with K={K}"
    )

    @parallelize
    def _one(imageId):
        return predict(model, bank, images[imageId], r=r, K=K, seed=seed)

    results: List[PredictionResult] = list()
    chunk = max(workers, 1) * 4
    with tqdm(total=len(ids), desc="Predicting", disable=not pbar) as bar:
        for start in range(0, len(ids), chunk):
            part = ids[start : start + chunk]
            results.extend(_one(part, workers=workers))
            bar.update(len(part))
    return dict(zip(ids, results))
