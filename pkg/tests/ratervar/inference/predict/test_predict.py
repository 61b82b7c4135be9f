import numpy as np
import pytest


def _image(seed=0, size=8):
    return np.random.default_rng(seed).integers(0, 256, size=(size, size, 3), dtype=np.uint8)


def test_result_shapes_and_normalization(small_model):
    from ratervar.inference.predict import predict

    model, bank = small_model
    result = predict(model, bank, _image(), K=5, seed=1)
    assert result.mean_probs.shape == (3, 8, 8)
    assert result.sample_maps.shape == (5, 8, 8)
    assert result.uncertainty.shape == result.argmax_map.shape == result.entropy.shape == (8, 8)
    assert np.allclose(result.mean_probs.sum(axis=0), 1.0, atol=1e-5)
    assert np.all((result.uncertainty >= 0) & (result.uncertainty <= 1))
    assert np.all(result.entropy <= np.log(3) + 1e-9)
    assert np.array_equal(result.argmax_map, result.mean_probs.argmax(axis=0))
    assert result.rater == bank.gold and result.metadata["gold"] is True


def test_single_sample_has_no_uncertainty(small_model):
    from ratervar.inference.predict import predict

    model, bank = small_model
    assert np.all(predict(model, bank, _image(), r=0, K=1).uncertainty == 0)


def test_collapsed_latent_has_no_uncertainty(small_model):
    from ratervar.inference.predict import predict
    from ratervar.latent.gaussian import GaussianLatent, RaterBank

    model, bank = small_model
    tight = GaussianLatent.from_cholesky(bank[0].mean(), 1e-6 * np.eye(4))
    narrow = RaterBank([tight, bank[bank.gold]], bank.prior_var)
    result = predict(model, narrow, _image(), r=0, K=16)
    assert result.uncertainty.max() < 1e-6


def test_seeded(small_model):
    from ratervar.inference.predict import predict

    model, bank = small_model
    a = predict(model, bank, _image(), r=1, K=4, seed=7)
    b = predict(model, bank, _image(), r=1, K=4, seed=7)
    c = predict(model, bank, _image(), r=1, K=4, seed=8)
    assert np.array_equal(a.mean_probs, b.mean_probs)
    assert not np.array_equal(a.mean_probs, c.mean_probs)


def test_more_samples_converge(small_model):
    from ratervar.inference.predict import predict

    model, bank = small_model

    def spread(K):
        a = predict(model, bank, _image(), r=0, K=K, seed=1).mean_probs
        b = predict(model, bank, _image(), r=0, K=K, seed=2).mean_probs
        return np.abs(a - b).mean()

    few, many = spread(4), spread(256)
    assert many < few
    assert many < 0.05


def test_float_input_matches_uint8(small_model):
    from ratervar.inference.predict import predict
    from ratervar.network.model import image_to_array

    model, bank = small_model
    a = predict(model, bank, _image(), K=2)
    b = predict(model, bank, image_to_array(_image()), K=2)
    assert np.array_equal(a.mean_probs, b.mean_probs)


def test_invalid_requests(small_model):
    from ratervar.exception.exception import PreconditionError
    from ratervar.inference.predict import predict

    model, bank = small_model
    with pytest.raises(PreconditionError):
        predict(model, bank, _image(), r=3)
    with pytest.raises(PreconditionError):
        predict(model, bank, _image(), K=0)


def test_simulate_gold_warns(small_model):
    from ratervar.inference.predict import simulate_rater
    from ratervar.warn.warnings import GoldRaterWarning

    model, bank = small_model
    with pytest.warns(GoldRaterWarning):
        result = simulate_rater(model, bank, _image(), bank.gold, K=2)
    assert result.metadata["gold"] is True
    human = simulate_rater(model, bank, _image(), 0, K=3)
    assert human.metadata["gold"] is False and human.sample_maps.shape == (3, 8, 8)


def test_blend(small_model):
    from ratervar.exception.exception import PreconditionError
    from ratervar.inference.predict import blend_raters

    model, bank = small_model
    result = blend_raters(model, bank, _image(), 0, 1, K=3, seed=2)
    assert result.sample_maps.shape == (6, 8, 8)
    assert np.allclose(result.mean_probs.sum(axis=0), 1.0, atol=1e-5)
    assert result.metadata["blend_with"] == 1
    with pytest.raises(PreconditionError):
        blend_raters(model, bank, _image(), 0, 7)


def test_self_blend_matches_double_sample_prediction(small_model):
    from ratervar.inference.predict import blend_raters, predict

    model, bank = small_model
    image = _image(4)
    blended = blend_raters(model, bank, image, 1, 1, K=64, seed=5)
    pooled = predict(model, bank, image, r=1, K=128, seed=6)
    assert blended.sample_maps.shape == (128, 8, 8)
    assert np.allclose(blended.mean_probs.sum(axis=0), 1.0, atol=1e-5)
    assert np.mean(np.abs(blended.mean_probs - pooled.mean_probs)) < 0.05


def test_predictive_entropy():
    from ratervar.inference.predict import predictive_entropy

    probs = np.zeros((2, 1, 2))
    probs[:, 0, 0] = [0.5, 0.5]
    probs[:, 0, 1] = [1.0, 0.0]
    assert np.allclose(predictive_entropy(probs), [[np.log(2), 0.0]])


def test_dataset_prediction_independent_of_workers(small_model):
    from ratervar.inference.predict import predict_dataset

    model, bank = small_model
    images = {f"img_{i}": _image(i) for i in range(5)}
    serial = predict_dataset(model, bank, images, r=0, K=2, seed=3, workers=1)
    threaded = predict_dataset(model, bank, images, r=0, K=2, seed=3, workers=3)
    assert list(serial) == sorted(images)
    for imageId in images:
        assert np.array_equal(serial[imageId].mean_probs, threaded[imageId].mean_probs)


@pytest.mark.slow
def test_trained_raters_keep_their_habits():
    from ratervar.data.synthesize import GenerationConfig, generate_split
    from ratervar.inference.predict import predict, simulate_rater
    from ratervar.train.config import TrainConfig
    from ratervar.train.trainer import train

    gen = GenerationConfig(test=20, raters="faithful,faithful,confuser:2:3:0.8,under_segmenter:0.5:bg", seed=1)
    confuser, underSegmenter = 2, 3
    testSet = generate_split(gen, "test").dataset
    result = train(generate_split(gen, "train").dataset, TrainConfig(seed=1), pbar=False)
    model, bank = result.model, result.bank

    goldMass = underMass = 0.0
    relabelled = classTwo = 0
    for imageId in testSet.image_ids:
        image = testSet.images[imageId]
        goldMass += float(np.sum(1.0 - predict(model, bank, image, seed=2).mean_probs[0]))
        underMass += float(np.sum(1.0 - simulate_rater(model, bank, image, underSegmenter, seed=2).mean_probs[0]))
        src = testSet.gold[imageId] == 2
        confused = simulate_rater(model, bank, image, confuser, seed=2).argmax_map
        relabelled += int(np.sum(confused[src] == 3))
        classTwo += int(np.sum(src))
    assert underMass < goldMass
    assert classTwo > 0 and relabelled / classTwo > 0.5


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__]))
