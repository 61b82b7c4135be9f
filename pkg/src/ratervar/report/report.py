"""
Human readable reports of a trained model on a multi-rater dataset:
per-rater agreement, latent geometry and colour keyed overlays.
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from ratervar.data.io import ensure_dir, save_image
from ratervar.data.synthesize import class_colors
from ratervar.exception.exception import MetricError, PreconditionError, ShapeError
from ratervar.inference.predict import DEFAULT_SAMPLES, PredictionResult, predict
from ratervar.latent.gaussian import RaterBank, pairwise_overlap
from ratervar.metrics.agreement import Contingency, safe_kappa, contingency, evaluate
from ratervar.misc.utils import IGNORE_LABEL, get_logger

OVERLAY_ALPHA = 0.5
# green, yellow, orange, red
DEFAULT_PALETTE = np.array(
    [[0, 200, 0], [255, 255, 0], [255, 165, 0], [255, 0, 0]], dtype=np.uint8
)
AGREEMENT_NAME = "agreement.csv"
OVERLAP_NAME = "latent_overlap.csv"
PROJECTION_NAME = "latent_projection.csv"
OVERLAY_DIR = "overlays"


@dataclass
class ReportPaths:
    agreement: str
    overlap: str
    projection: str
    overlays: List[str]

    def all(self) -> List[str]:
        return [self.agreement, self.overlap, self.projection] + list(self.overlays)


def rater_label(bank: RaterBank, r: int) -> str:
    return "gold" if r == bank.gold else str(r)


def palette(numClasses: int) -> np.ndarray:
    """(C, 3) uint8 colours; classes past the fourth get evenly spaced hues."""
    if numClasses <= len(DEFAULT_PALETTE):
        return DEFAULT_PALETTE[:numClasses].copy()
    extra = np.rint(class_colors(numClasses)[len(DEFAULT_PALETTE) :] * 255).astype(np.uint8)
    return np.concatenate([DEFAULT_PALETTE, extra])


def overlay(
    image: np.ndarray, classMap: np.ndarray, numClasses: int, alpha: float = OVERLAY_ALPHA
) -> np.ndarray:
    """
    Blend the class colour of every pixel over an uint8 (H, W, 3) image.
    Pixels carrying the ignore label keep the image colour.
    """
    image = np.asarray(image)
    classMap = np.asarray(classMap)
    if image.shape[:2] != classMap.shape:
        raise ShapeError(f"class map {classMap.shape} does not match image {image.shape[:2]}")
    colors = palette(numClasses)
    labelled = classMap != IGNORE_LABEL
    tinted = image.astype(np.float64)
    keyed = colors[classMap[labelled].astype(np.int64)].astype(np.float64)
    tinted[labelled] = (1 - alpha) * tinted[labelled] + alpha * keyed
    return np.clip(np.rint(tinted), 0, 255).astype(np.uint8)


def _pooled(pairs, numClasses: int) -> Optional[Contingency]:
    conts = [contingency(p, r, numClasses) for p, r in pairs if p is not None and r is not None]
    conts = [c for c in conts if c.total > 0]
    if not conts:
        return None
    return sum(conts[1:], conts[0])


def _kappa_or_nan(cont: Optional[Contingency], weighting: str = "none") -> float:
    return float("nan") if cont is None else safe_kappa(cont, weighting)


def rater_agreement(
    dataset,
    predictions: Dict[int, Dict[str, PredictionResult]],
    bank: RaterBank,
) -> pd.DataFrame:
    """
    One row per human rater r with

        kappa_vs_others     mean over r' != r of pooled kappa(masks r', masks r)
        kappa_simulation    pooled kappa(simulated rater r, masks r)
        kappa_gold_pred     pooled kappa(gold prediction, masks r)

    ``predictions[r][image id]`` holds the prediction of rater slot r.
    """
    C = dataset.num_classes
    ids = dataset.image_ids
    rows = list()
    for r in range(dataset.num_raters):
        own = [dataset.masks.get((i, r)) for i in ids]
        others = list()
        for other in range(dataset.num_raters):
            if other == r:
                continue
            cont = _pooled(zip([dataset.masks.get((i, other)) for i in ids], own), C)
            if cont is not None:
                others.append(_kappa_or_nan(cont))
        others = [k for k in others if np.isfinite(k)]
        simulated = [predictions[r][i].argmax_map for i in ids]
        goldPred = [predictions[bank.gold][i].argmax_map for i in ids]
        rows.append(
            {
                "rater": r,
                "annotated_images": sum(m is not None for m in own),
                "kappa_vs_others": float(np.mean(others)) if others else float("nan"),
                "kappa_simulation": _kappa_or_nan(_pooled(zip(simulated, own), C)),
                "kappa_gold_pred": _kappa_or_nan(_pooled(zip(goldPred, own), C)),
            }
        )
    return pd.DataFrame(rows)


def gold_agreement(dataset, predictions: Dict[str, PredictionResult]) -> dict:
    """Scores of the gold prediction against the dataset's gold masks."""
    if not dataset.has_gold:
        raise PreconditionError("gold metrics requested but the dataset has no gold masks")
    ids = [i for i in dataset.image_ids if i in dataset.gold]
    scores = evaluate(
        [predictions[i].argmax_map for i in ids],
        [dataset.gold[i] for i in ids],
        dataset.num_classes,
    )
    return {"rater": "gold", "annotated_images": len(ids), **scores.as_row()}


def latent_overlap_frame(bank: RaterBank) -> pd.DataFrame:
    labels = [rater_label(bank, r) for r in range(len(bank))]
    frame = pd.DataFrame(pairwise_overlap(bank), columns=labels)
    frame.insert(0, "rater", labels)
    return frame


def latent_projection_frame(bank: RaterBank) -> pd.DataFrame:
    """
    Means projected on the first two latent coordinates with the matching
    2 x 2 block of every covariance.
    """
    rows = list()
    for r, latent in enumerate(bank.latents):
        mu = latent.mean()
        cov = latent.covariance()
        D = min(bank.latent_dim, 2)
        row = {"rater": rater_label(bank, r)}
        for a in range(2):
            row[f"mu_{a}"] = float(mu[a]) if a < D else 0.0
        for a, b in ((0, 0), (0, 1), (1, 1)):
            row[f"sigma_{a}{b}"] = float(cov[a, b]) if max(a, b) < D else 0.0
        rows.append(row)
    return pd.DataFrame(rows)


def latent_table(bank: RaterBank) -> pd.DataFrame:
    """
    One row per latent: mean vector, covariance diagonal and Bhattacharyya
    distance to every other latent.
    """
    overlap = pairwise_overlap(bank)
    labels = [rater_label(bank, r) for r in range(len(bank))]
    rows = list()
    for r, latent in enumerate(bank.latents):
        row = {"rater": labels[r]}
        row.update({f"mu_{d}": float(v) for d, v in enumerate(latent.mean())})
        row.update({f"var_{d}": float(v) for d, v in enumerate(np.diag(latent.covariance()))})
        row.update({f"bhatt_{labels[j]}": float(overlap[r, j]) for j in range(len(bank))})
        rows.append(row)
    return pd.DataFrame(rows)


def predict_all(model, bank: RaterBank, dataset, K: int, seed: int, pbar: bool = False):
    """Predictions of every rater slot (humans and gold) on every image."""
    predictions: Dict[int, Dict[str, PredictionResult]] = {r: dict() for r in range(len(bank))}
    ids = dataset.image_ids
    for imageId in tqdm(ids, desc="Reporting", disable=not pbar):
        for r in range(len(bank)):
            predictions[r][imageId] = predict(model, bank, dataset.images[imageId], r=r, K=K, seed=seed)
    return predictions


def write_report(
    model,
    bank: RaterBank,
    dataset,
    outDir: str,
    K: int = DEFAULT_SAMPLES,
    seed: int = 0,
    goldMetrics: bool = False,
    pbar: bool = False,
) -> ReportPaths:
    """
    Write the agreement CSV, the latent CSVs and one overlay PPM per image
    (gold prediction over the input) into outDir.

    Parameters
    ----------
        model : SegModel
        bank : RaterBank
        dataset : MultiRaterDataset
        outDir : str
        K : int, default=16
        seed : int, default=0
        goldMetrics : bool, default=False
            Append a row scoring the gold prediction against the dataset's
            gold masks.
        pbar : bool, default=False

    Raises
    ------
        PreconditionError
            If gold metrics are requested for a dataset without gold, or the
            bank and dataset disagree on the number of raters.
    """
    logger = get_logger("ratervar.report.report")
    if bank.num_raters != dataset.num_raters:
        raise PreconditionError(
            f"checkpoint has {bank.num_raters} raters, dataset has {dataset.num_raters}"
        )
    if model.num_classes != dataset.num_classes:
        raise PreconditionError(
            f"checkpoint has {model.num_classes} classes, dataset has {dataset.num_classes}"
        )
    if goldMetrics and not dataset.has_gold:
        raise PreconditionError("gold metrics requested but the dataset has no gold masks")
    ensure_dir(outDir)
    predictions = predict_all(model, bank, dataset, K, seed, pbar)

    agreement = rater_agreement(dataset, predictions, bank)
    if goldMetrics:
        try:
            goldRow = gold_agreement(dataset, predictions[bank.gold])
        except MetricError as err:
            raise PreconditionError(f"gold metrics unavailable: {err}") from err
        agreement = pd.concat([agreement, pd.DataFrame([goldRow])], ignore_index=True)
    paths = ReportPaths(
        agreement=os.path.join(outDir, AGREEMENT_NAME),
        overlap=os.path.join(outDir, OVERLAP_NAME),
        projection=os.path.join(outDir, PROJECTION_NAME),
        overlays=list(),
    )
    agreement.to_csv(paths.agreement, index=False)
    latent_overlap_frame(bank).to_csv(paths.overlap, index=False)
    latent_projection_frame(bank).to_csv(paths.projection, index=False)

    overlayDir = ensure_dir(os.path.join(outDir, OVERLAY_DIR))
    for imageId in dataset.image_ids:
        path = os.path.join(overlayDir, f"{imageId}.ppm")
        classMap = predictions[bank.gold][imageId].argmax_map
        save_image(path, overlay(dataset.images[imageId], classMap, dataset.num_classes))
        paths.overlays.append(path)
    logger.info(f"Wrote report for {len(dataset)} images to {outDir}")
    return paths
