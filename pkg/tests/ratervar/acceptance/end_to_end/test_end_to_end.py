"""
Full synthetic experiment: default generated dataset, default training
config, 100 epochs. Takes several minutes per seed; run with
RATERVAR_RUN_SLOW=1.
"""

import numpy as np
import pytest

CONFUSER = 2
FAITHFUL = (0, 1)


def _pooled_kappa(preds, refs, numClasses):
    from ratervar.metrics.agreement import evaluate

    return evaluate(preds, refs, numClasses).kappa_unweighted


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_synthetic_experiment(seed):
    from ratervar.data.synthesize import GenerationConfig, generate_split
    from ratervar.inference.predict import predict, simulate_rater
    from ratervar.latent.gaussian import pairwise_overlap
    from ratervar.train.config import TrainConfig
    from ratervar.train.trainer import train

    gen = GenerationConfig(seed=seed)
    trainSet = generate_split(gen, "train").dataset
    testSet = generate_split(gen, "test").dataset
    C = testSet.num_classes
    result = train(trainSet, TrainConfig(seed=seed), pbar=False)
    assert result.log.ll.iloc[-1] < 0.25
    smooth = result.log.loss.rolling(5).mean().dropna().to_numpy()
    assert smooth[-1] < smooth[0]
    model, bank = result.model, result.bank
    ids = testSet.image_ids

    gold = {i: predict(model, bank, testSet.images[i], seed=seed) for i in ids}
    assert _pooled_kappa([gold[i].argmax_map for i in ids], [testSet.gold[i] for i in ids], C) >= 0.70

    annotated = [i for i in ids if (i, CONFUSER) in testSet.masks]
    own = [testSet.masks[(i, CONFUSER)] for i in annotated]
    simulated = [simulate_rater(model, bank, testSet.images[i], CONFUSER, seed=seed).argmax_map for i in annotated]
    others = list()
    for r in range(testSet.num_raters):
        if r == CONFUSER:
            continue
        pairs = [(testSet.masks[(i, r)], testSet.masks[(i, CONFUSER)]) for i in annotated if (i, r) in testSet.masks]
        others.append(_pooled_kappa([p for p, _ in pairs], [q for _, q in pairs], C))
    assert _pooled_kappa(simulated, own, C) >= np.mean(others) + 0.05

    overlap = pairwise_overlap(bank)
    assert overlap[CONFUSER, bank.gold] > overlap[FAITHFUL[0], FAITHFUL[1]]

    disagree, unanimous = list(), list()
    for i in ids:
        masks = np.stack([m for m in testSet.rater_masks(i) if m is not None])
        split = (masks != masks[0]).any(axis=0)
        disagree.append(gold[i].uncertainty[split])
        unanimous.append(gold[i].uncertainty[~split])
    assert np.concatenate(disagree).mean() > np.concatenate(unanimous).mean()


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__]))
