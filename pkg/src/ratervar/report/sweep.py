"""
One-at-a-time hyperparameter robustness grid around a base training config.
"""

import os
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from ratervar.exception.exception import ConfigError, PreconditionError
from ratervar.inference.predict import DEFAULT_SAMPLES, predict
from ratervar.metrics.agreement import evaluate
from ratervar.misc.utils import get_logger
from ratervar.train.config import TrainConfig
from ratervar.train.trainer import train

DEFAULT_GRID: Dict[str, Tuple] = {
    "D": (4, 8, 16),
    "prior_var": (1.0, 2.0, 4.0),
    "post_var": (4.0, 8.0, 16.0),
    "lambda_kl": (0.0001, 0.0005, 0.001),
    "lr_latent": (0.01, 0.02, 0.04),
}
SWEEP_COLUMNS = ["hyperparameter", "value", "kappa_unweighted", "accuracy"]
SWEEP_NAME = "sweep.csv"


def grid_configs(base: TrainConfig, grid: Optional[Dict[str, Sequence]] = None) -> List[Tuple[str, object, TrainConfig]]:
    """
    Expand a grid into (hyperparameter, value, config) triples, varying one
    field at a time while the others keep their base values.

    Examples
    --------
    >>> len(grid_configs(TrainConfig(), {"D": (4, 8)}))
    2
    """
    grid = DEFAULT_GRID if grid is None else grid
    runs = list()
    for name, values in grid.items():
        if not hasattr(base, name):
            raise ConfigError(f"unknown hyperparameter {name!r} in sweep grid")
        for value in values:
            runs.append((name, value, base.replace(**{name: value})))
    return runs


def score_gold(model, bank, testSet, K: int = DEFAULT_SAMPLES, seed: int = 0):
    """Pooled agreement of the gold prediction with the test gold masks."""
    if not testSet.has_gold:
        raise PreconditionError("sweep scoring needs a test set with gold masks")
    ids = [i for i in testSet.image_ids if i in testSet.gold]
    preds = [predict(model, bank, testSet.images[i], K=K, seed=seed).argmax_map for i in ids]
    return evaluate(preds, [testSet.gold[i] for i in ids], testSet.num_classes)


def sweep(
    trainSet,
    testSet,
    base: TrainConfig,
    grid: Optional[Dict[str, Sequence]] = None,
    outDir: Optional[str] = None,
    K: int = DEFAULT_SAMPLES,
    pbar: bool = True,
) -> pd.DataFrame:
    """
    Train a fresh model per grid point and score its gold prediction on
    the test set.

    Parameters
    ----------
        trainSet, testSet : MultiRaterDataset
        base : TrainConfig
        grid : Dict[str, Sequence], optional
            Field name to candidate values; defaults to DEFAULT_GRID.
        outDir : str, optional
            When given, ``sweep.csv`` is rewritten there after every run.
        K : int, default=16
        pbar : bool, default=True

    Returns
    -------
        table : pd.DataFrame
            Columns hyperparameter, value, kappa_unweighted, accuracy.
    """
    logger = get_logger("ratervar.report.sweep")
    runs = grid_configs(base, grid)
    logger.info(f"Sweeping {len(runs)} configurations")
    rows = list()
    table = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    for name, value, cfg in tqdm(runs, desc="Sweep", disable=not pbar):
        result = train(trainSet, cfg, pbar=False)
        scores = score_gold(result.model, result.bank, testSet, K=K, seed=cfg.seed)
        rows.append([name, value, scores.kappa_unweighted, scores.accuracy])
        logger.info(f"{name}={value}: kappa={scores.kappa_unweighted:.4f} accuracy={scores.accuracy:.4f}")
        table = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        if outDir is not None:
            os.makedirs(outDir, exist_ok=True)
            table.to_csv(os.path.join(outDir, SWEEP_NAME), index=False)
    return table
