"""
Variational training of the segmentation network and the rater bank.

Each step minimizes

    loss = mean over (element, MC sample) of the likelihood loss
           + lambda_kl * mean over raters of KL(q(z|r) || p(z))

with the raters taken from the batch (kl_scope='batch') or the whole bank
(kl_scope='all'). Network parameters and latent parameters are updated by
separate Adam states with their own learning rates.
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from ratervar.autodiff.tensor import Gradients, Tensor, backward
from ratervar.exception.exception import NumericalError, PreconditionError, ShapeError
from ratervar.fusion.staple import derive_gold
from ratervar.latent.gaussian import RaterBank, init_bank, kl_to_prior, sample
from ratervar.misc.utils import derive_rng, get_logger
from ratervar.network.losses import LOSSES, one_hot
from ratervar.network.model import SegModel, extract_features, image_to_array, segment
from ratervar.train.adam import OptimizerState, adam_update
from ratervar.train.checkpoint import save_checkpoint
from ratervar.train.config import TrainConfig
from ratervar.train.schedule import lr_schedule

LOG_COLUMNS = ["epoch", "loss", "ll", "kl", "lr_net", "lr_latent"]
CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train_log.csv"
CONFIG_NAME = "config.txt"

# stream ids for derive_rng
_MODEL_STREAM, _BANK_STREAM, _ORDER_STREAM, _AUGMENT_STREAM, _SAMPLE_STREAM = range(5)


@dataclass
class BatchElement:
    image: np.ndarray
    rater: int
    mask: np.ndarray


@dataclass
class StepResult:
    loss: float
    ll: float
    kl: float
    gradients: Gradients
    loss_tensor: Tensor


@dataclass
class TrainResult:
    model: SegModel
    bank: RaterBank
    optimizer: OptimizerState
    log: pd.DataFrame
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None


def elbo_step(
    model: SegModel,
    bank: RaterBank,
    batch: Sequence,
    cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
) -> StepResult:
    """
    Loss and gradients for one batch.

    Parameters
    ----------
        model : SegModel
        bank : RaterBank
        batch : Sequence of BatchElement or (image, rater, mask) tuples
            ``image`` is a (3, H, W) float array, ``mask`` an (H, W) class
            map (255 ignored). Gold pairs use rater id ``bank.gold``.
        cfg : TrainConfig
            Uses K_train, lambda_kl, loss and kl_scope.
        rng : np.random.Generator, optional
            Source of the reparametrization noise.

    Returns
    -------
        result : StepResult

    Raises
    ------
        PreconditionError
            On an empty batch or an invalid rater id.
        NumericalError
            If the loss is not finite.
    """
    if len(batch) == 0:
        raise PreconditionError("elbo_step needs a non-empty batch")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    elements = [b if isinstance(b, BatchElement) else BatchElement(*b) for b in batch]
    raters = [bank.check_rater(e.rater) for e in elements]
    lossFn = LOSSES[cfg.loss]

    images = np.stack([np.asarray(e.image, dtype=model.dtype) for e in elements])
    features = extract_features(model, images)
    D = bank.latent_dim

    llTerms = list()
    for i, element in enumerate(elements):
        mask = np.asarray(element.mask)
        if mask.shape != images.shape[2:]:
            raise ShapeError(f"mask shape {mask.shape} differs from image {images.shape[2:]}")
        target, valid = one_hot(mask[None], model.num_classes, dtype=model.dtype)
        featuresI = features[i : i + 1]
        for _ in range(cfg.K_train):
            z = sample(bank, element.rater, rng.standard_normal(D))
            llTerms.append(lossFn(segment(model, featuresI, z), target, valid))
    ll = sum(llTerms[1:], llTerms[0]) * (1.0 / len(llTerms))

    klRaters = sorted(set(raters)) if cfg.kl_scope == "batch" else list(range(len(bank)))
    klTerms = [kl_to_prior(bank, r) for r in klRaters]
    kl = sum(klTerms[1:], klTerms[0]) * (1.0 / len(klTerms))

    loss = ll + kl * cfg.lambda_kl
    if not np.isfinite(loss.item()):
        raise NumericalError(f"loss is not finite (ll={ll.item()}, kl={kl.item()})")
    return StepResult(loss.item(), ll.item(), kl.item(), backward(loss), loss)


def augment_pair(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
    """
    Seeded horizontal/vertical flips and 90 degree rotations applied jointly
    to a (3, H, W) image and its (H, W) mask. Rotations are only drawn for
    square images.
    """
    if rng.random() < 0.5:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    k = int(rng.integers(0, 4))
    if k and mask.shape[0] == mask.shape[1]:
        image, mask = np.rot90(image, k, axes=(1, 2)), np.rot90(mask, k)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def gold_labels(dataset, cfg: TrainConfig) -> Dict[str, np.ndarray]:
    """Gold masks used to train the gold slot, according to cfg.gold_source."""
    logger = get_logger("ratervar.train.trainer")
    if cfg.gold_source == "none":
        return dict()
    if cfg.gold_source == "provided":
        if not dataset.has_gold:
            logger.warning("gold_source=provided but the dataset has no gold masks")
            return dict()
        return dict(dataset.gold)
    return derive_gold(dataset, method=cfg.gold_source)


def training_pairs(dataset, gold: Dict[str, np.ndarray]) -> List[Tuple[str, int]]:
    """One (image id, rater) pair per annotation; gold pairs use rater M."""
    pairs = list(dataset.annotations())
    pairs += [(imageId, dataset.gold_rater) for imageId in dataset.image_ids if imageId in gold]
    return pairs


def train(
    dataset,
    cfg: TrainConfig,
    outDir: Optional[str] = None,
    pbar: bool = True,
) -> TrainResult:
    """
    Train a fresh model and rater bank on a MultiRaterDataset.

    Parameters
    ----------
        dataset : MultiRaterDataset
        cfg : TrainConfig
        outDir : str, optional
            When given, receives ``train_log.csv`` (rewritten after every
            epoch), ``config.txt`` and ``model.ckpt`` (every
            ``checkpoint_every`` epochs and at the end).
        pbar : bool, default=True
            Show a tqdm progress bar over epochs.

    Returns
    -------
        result : TrainResult
    """
    logger = get_logger("ratervar.train.trainer")
    gold = gold_labels(dataset, cfg)
    pairs = training_pairs(dataset, gold)
    if not pairs:
        raise PreconditionError("dataset has no annotation pairs to train on")

    model = SegModel.init(
        dataset.num_classes,
        latentDim=cfg.D,
        seed=int(derive_rng(cfg.seed, _MODEL_STREAM).integers(2**32)),
    )
    bank = init_bank(
        dataset.num_raters,
        D=cfg.D,
        prior_var=cfg.prior_var,
        post_var=cfg.post_var,
        seed=int(derive_rng(cfg.seed, _BANK_STREAM).integers(2**32)),
    )
    netParams, latentParams = model.parameters(), bank.parameters()
    opt = OptimizerState()

    arrays = {imageId: image_to_array(dataset.images[imageId]) for imageId in dataset.image_ids}

    def mask_for(imageId: str, r: int) -> np.ndarray:
        return gold[imageId] if r == dataset.gold_rater else dataset.masks[(imageId, r)]

    logPath = checkpointPath = None
    if outDir is not None:
        os.makedirs(outDir, exist_ok=True)
        logPath = os.path.join(outDir, LOG_NAME)
        checkpointPath = os.path.join(outDir, CHECKPOINT_NAME)
        with open(os.path.join(outDir, CONFIG_NAME), "w") as f:
            f.write(cfg.to_text())

    logger.info(
        f"Training on {len(pairs)} pairs ({len(gold)} gold) for {cfg.epochs} epochs, "
        f"batch size {cfg.batch_size}, loss {cfg.loss}"
    )
    rows = list()
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    if logPath is not None:
        log.to_csv(logPath, index=False)

    for epoch in tqdm(range(cfg.epochs), desc="Training", disable=not pbar):
        lrNet = lr_schedule(epoch, cfg.lr_net, cfg)
        lrLatent = lr_schedule(epoch, cfg.lr_latent, cfg)
        order = derive_rng(cfg.seed, _ORDER_STREAM, epoch).permutation(len(pairs))
        augRng = derive_rng(cfg.seed, _AUGMENT_STREAM, epoch)
        sampleRng = derive_rng(cfg.seed, _SAMPLE_STREAM, epoch)

        totals = np.zeros(3)
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = list()
            for idx in order[start : start + cfg.batch_size]:
                imageId, r = pairs[idx]
                image, mask = arrays[imageId], mask_for(imageId, r)
                if cfg.augment:
                    image, mask = augment_pair(image, mask, augRng)
                batch.append(BatchElement(image, r, mask))

            result = elbo_step(model, bank, batch, cfg, sampleRng)
            grads = result.gradients
            adam_update(
                netParams,
                {k: grads[t] for k, t in netParams.items() if t in grads},
                opt.net,
                lrNet,
            )
            adam_update(
                latentParams,
                {k: grads[t] for k, t in latentParams.items() if t in grads},
                opt.latent,
                lrLatent,
            )
            totals += (result.loss, result.ll, result.kl)
            steps += 1

        opt.epoch = epoch + 1
        meanLoss, meanLL, meanKL = totals / max(steps, 1)
        rows.append([epoch, meanLoss, meanLL, meanKL, lrNet, lrLatent])
        log = pd.DataFrame(rows, columns=LOG_COLUMNS)
        logger.info(
            f"epoch {epoch}: loss={meanLoss:.5f} ll={meanLL:.5f} kl={meanKL:.5f} "
            f"lr_net={lrNet:.3g} lr_latent={lrLatent:.3g}"
        )
        if logPath is not None:
            log.to_csv(logPath, index=False)
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(model, bank, opt, checkpointPath)

    if checkpointPath is not None:
        save_checkpoint(model, bank, opt, checkpointPath)
    logger.info("Training finished")
    return TrainResult(model, bank, opt, log, checkpointPath, logPath)
