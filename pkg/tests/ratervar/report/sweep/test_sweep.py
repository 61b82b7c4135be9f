import os

import pandas as pd
import pytest


def test_grid_configs():
    from ratervar.report.sweep import DEFAULT_GRID, grid_configs
    from ratervar.train.config import TrainConfig

    base = TrainConfig()
    runs = grid_configs(base)
    assert len(runs) == sum(len(v) for v in DEFAULT_GRID.values())
    name, value, cfg = runs[0]
    assert (name, value, cfg.D) == ("D", 4, 4)
    assert cfg.replace(D=base.D) == base
    lam = [cfg.lambda_kl for n, _, cfg in runs if n == "lambda_kl"]
    assert lam == list(DEFAULT_GRID["lambda_kl"])


def test_grid_configs_unknown_field():
    from ratervar.exception.exception import ConfigError
    from ratervar.report.sweep import grid_configs
    from ratervar.train.config import TrainConfig

    with pytest.raises(ConfigError, match="depth"):
        grid_configs(TrainConfig(), {"depth": (1, 2)})


def test_sweep_writes_table(tiny_dataset, tmp_path):
    from ratervar.report.sweep import SWEEP_COLUMNS, sweep
    from ratervar.train.config import TrainConfig

    base = TrainConfig(epochs=0, D=2)
    table = sweep(tiny_dataset, tiny_dataset, base, grid={"D": (2, 3)}, outDir=str(tmp_path), K=1, pbar=False)
    assert list(table.columns) == SWEEP_COLUMNS
    assert list(table.value) == [2, 3]
    assert table.accuracy.between(0, 1).all()
    stored = pd.read_csv(os.path.join(tmp_path, "sweep.csv"))
    assert list(stored.hyperparameter) == ["D", "D"]


def test_score_gold_needs_gold(tiny_dataset, small_model):
    from ratervar.data.dataset import MultiRaterDataset
    from ratervar.exception.exception import PreconditionError
    from ratervar.report.sweep import score_gold

    model, bank = small_model
    scores = score_gold(model, bank, tiny_dataset, K=1)
    assert scores.pixels == 4 * 16 * 16
    noGold = MultiRaterDataset(images=tiny_dataset.images, masks=tiny_dataset.masks, num_classes=3, num_raters=2)
    with pytest.raises(PreconditionError):
        score_gold(model, bank, noGold, K=1)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__]))
