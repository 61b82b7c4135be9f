import os

import numpy as np
import pytest
from scipy import ndimage


def test_parse_rater_spec():
    from ratervar.data.synthesize import parse_rater_spec

    raters = parse_rater_spec("faithful, confuser:2:3:0.8@j=0 ,under_segmenter:0.5@p=1", jitter=3)
    assert [r.kind for r in raters] == ["faithful", "confuser", "under_segmenter"]
    assert raters[0].jitter_radius == 3 and raters[0].p_apply == 0.7
    assert (raters[1].src_class, raters[1].dst_class, raters[1].p, raters[1].jitter_radius) == (2, 3, 0.8, 0)
    assert raters[2].p_apply == 1.0
    assert parse_rater_spec(raters[1].to_spec())[0] == raters[1]


@pytest.mark.parametrize(
    "spec", ["", "faithful:1", "confuser:2:3", "over_grader:1.5", "painter", "faithful@q=1", "confuser:a:3:0.5", "under_segmenter:0.5:fg"]
)
def test_bad_rater_specs(spec):
    from ratervar.data.synthesize import parse_rater_spec
    from ratervar.exception.exception import ConfigError

    with pytest.raises(ConfigError):
        parse_rater_spec(spec)


def test_generation_config_validation():
    from ratervar.data.synthesize import GenerationConfig
    from ratervar.exception.exception import ConfigError

    for kwargs in (dict(classes=1), dict(size=20), dict(coverage=1.5), dict(raters="confuser:1:9:0.5")):
        with pytest.raises(ConfigError):
            GenerationConfig(**kwargs)
    cfg = GenerationConfig(train=3, raters="faithful,over_grader:0.2")
    assert GenerationConfig.from_text(cfg.to_text()) == cfg


def test_ground_truth():
    from ratervar.data.synthesize import FOUR_CONNECTED, gen_ground_truth

    image, mask = gen_ground_truth(size=32, numClasses=4, shapes=5, seed=3)
    assert image.shape == (32, 32, 3) and image.dtype == np.uint8
    assert mask.shape == (32, 32) and mask.max() < 4
    assert np.any(mask > 0)
    # shapes never touch, so every connected foreground region has one class
    labels, count = ndimage.label(mask > 0, structure=FOUR_CONNECTED)
    for k in range(1, count + 1):
        assert len(np.unique(mask[labels == k])) == 1
    again, _ = gen_ground_truth(size=32, numClasses=4, shapes=5, seed=3)
    assert np.array_equal(image, again)


def _gold(seed=0, size=32):
    from ratervar.data.synthesize import gen_ground_truth

    return gen_ground_truth(size=size, numClasses=4, shapes=4, seed=seed)[1]


def test_faithful_without_jitter_is_gold():
    from ratervar.data.synthesize import RaterArchetype, apply_archetype

    gold = _gold()
    rater = RaterArchetype("faithful", jitter_radius=0)
    assert np.array_equal(apply_archetype(gold, rater, np.random.default_rng(0)), gold)


def test_jitter_stays_near_boundaries():
    from ratervar.data.synthesize import FOUR_CONNECTED, RaterArchetype, apply_archetype

    rater = RaterArchetype("faithful", jitter_radius=2)
    changed = 0
    for seed in range(10):
        gold = _gold(seed)
        mask = apply_archetype(gold, rater, np.random.default_rng(seed))
        diff = mask != gold
        near = ndimage.binary_dilation(gold > 0, structure=FOUR_CONNECTED, iterations=2)
        assert not np.any(diff & ~near)
        assert mask.max() < 4
        changed += int(diff.sum())
    assert changed > 0


def test_jitter_never_writes_into_ignore_regions():
    from ratervar.data.synthesize import RaterArchetype, _components, apply_archetype

    rater = RaterArchetype("under_segmenter", p=0.5, jitter_radius=3, p_apply=1.0)
    erased = 0
    for seed in range(10):
        gold = _gold(seed)
        mask = apply_archetype(gold, rater, np.random.default_rng(seed))
        ignored = mask == 255
        assert np.all(gold[ignored] > 0)
        for _, component in _components(gold):
            hit = ignored[component]
            assert hit.all() or not hit.any()
            erased += int(hit.all())
    assert erased > 0


def test_over_grader_raises_grades():
    from ratervar.data.synthesize import RaterArchetype, apply_archetype

    gold = _gold(1)
    rater = RaterArchetype("over_grader", p=1.0, jitter_radius=0, p_apply=1.0)
    mask = apply_archetype(gold, rater, np.random.default_rng(0))
    assert np.array_equal(mask, np.where(gold > 0, np.minimum(gold + 1, 3), 0))


def _pooled_rate(dataset, rater, src, dst):
    hits = total = 0
    for imageId in dataset.image_ids:
        gold = dataset.gold[imageId]
        mask = dataset.masks[(imageId, rater)]
        total += int(np.sum(gold == src))
        hits += int(np.sum((gold == src) & (mask == dst)))
    return hits / total


def test_confuser_matches_analytic_confusion():
    from ratervar.data.synthesize import GenerationConfig, analytic_confusion, generate_split

    cfg = GenerationConfig(train=60, test=0, size=32, raters="faithful,confuser:2:3:0.8@p=1", jitter=0)
    dataset = generate_split(cfg, "train").dataset
    expected = analytic_confusion(cfg.archetypes()[1], 4)
    assert expected[2, 3] == pytest.approx(0.8)
    rate = _pooled_rate(dataset, 1, 2, 3)
    assert rate > 0.5
    assert rate == pytest.approx(expected[2, 3], abs=0.03)
    assert _pooled_rate(dataset, 0, 2, 2) == 1.0


def test_confuser_with_partial_application():
    from ratervar.data.synthesize import GenerationConfig, analytic_confusion, generate_split

    cfg = GenerationConfig(test=0)
    dataset = generate_split(cfg, "train").dataset
    assert len(dataset) == 200
    expected = analytic_confusion(cfg.archetypes()[2], 4)
    assert expected[2, 3] == pytest.approx(0.56)
    assert _pooled_rate(dataset, 2, 2, 3) == pytest.approx(expected[2, 3], abs=0.03)


def test_background_under_segmenter():
    from ratervar.data.synthesize import RaterArchetype, analytic_confusion, apply_archetype, parse_rater_spec

    rater = parse_rater_spec("under_segmenter:0.5:bg@j=0@p=1")[0]
    assert rater.fill == 0 and rater.to_spec() == "under_segmenter:0.5:bg@j=0@p=1.0"
    assert parse_rater_spec(rater.to_spec())[0] == rater
    assert parse_rater_spec("under_segmenter:0.5")[0].fill == 255

    gold = _gold(2)
    everything = RaterArchetype("under_segmenter", p=1.0, jitter_radius=0, p_apply=1.0, fill=0)
    assert not apply_archetype(gold, everything, np.random.default_rng(0)).any()

    theta = analytic_confusion(rater, 4)
    assert theta[1:, 0].tolist() == [0.5, 0.5, 0.5]
    assert np.allclose(theta.sum(axis=1), 1.0) and theta[0, 0] == 1.0


def test_coverage():
    from ratervar.data.synthesize import GenerationConfig, generate_split

    cfg = GenerationConfig(train=200, test=0, size=16, shapes=1, coverage=0.5, raters="faithful,faithful,faithful")
    split = generate_split(cfg, "train")
    assert split.masks_total == 600
    assert split.masks_present == len(split.dataset.masks)
    assert split.masks_present / split.masks_total == pytest.approx(0.5, abs=0.1)


def test_generation_is_order_independent():
    from ratervar.data.synthesize import GenerationConfig, generate_split

    cfg = GenerationConfig(train=6, test=0, size=16, seed=4)
    serial = generate_split(cfg, "train", workers=1).dataset
    threaded = generate_split(cfg, "train", workers=3).dataset
    assert serial.image_ids == [f"train_{i:04d}" for i in range(6)]
    for key, mask in serial.masks.items():
        assert np.array_equal(threaded.masks[key], mask)


def test_gen_dataset_writes_manifest(tmp_path):
    from ratervar.data.dataset import load_dataset
    from ratervar.data.synthesize import MANIFEST_NAME, GenerationConfig, gen_dataset, read_manifest
    from ratervar.misc.utils import parse_key_values

    cfg = GenerationConfig(train=3, test=2, size=16, coverage=0.7, seed=2)
    splits = gen_dataset(cfg, str(tmp_path))
    manifest = os.path.join(tmp_path, MANIFEST_NAME)
    assert read_manifest(manifest) == cfg
    with open(manifest) as f:
        entries = parse_key_values(f.read())
    assert entries["rater.2.kind"] == "confuser"
    assert int(entries["masks_present.test"]) == splits["test"].masks_present
    assert len(load_dataset(os.path.join(tmp_path, "test"))) == 2
    assert len(load_dataset(os.path.join(tmp_path, "train")).masks) == splits["train"].masks_present


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__]))
