import os

import numpy as np
import pytest


def test_round_trip(tmp_path, tiny_dataset):
    from ratervar.data.dataset import load_dataset, save_dataset

    path = save_dataset(tiny_dataset, os.path.join(tmp_path, "ds"))
    loaded = load_dataset(path)
    assert loaded.image_ids == tiny_dataset.image_ids
    assert loaded.num_classes == 3 and loaded.num_raters == 2
    assert loaded.class_names == ["background", "class_1", "class_2"]
    assert set(loaded.masks) == set(tiny_dataset.masks)
    for key, mask in tiny_dataset.masks.items():
        assert np.array_equal(loaded.masks[key], mask)
    for imageId, image in tiny_dataset.images.items():
        assert np.array_equal(loaded.images[imageId], image)
        assert np.array_equal(loaded.gold[imageId], tiny_dataset.gold[imageId])


def test_sparse_annotations_without_gold(tmp_path, tiny_dataset):
    from ratervar.data.dataset import MultiRaterDataset, load_dataset, save_dataset

    ids = tiny_dataset.image_ids
    masks = {(ids[0], 0): tiny_dataset.masks[(ids[0], 0)], (ids[1], 1): tiny_dataset.masks[(ids[1], 1)]}
    sparse = MultiRaterDataset(tiny_dataset.images, masks, 3, 2, class_names=["bg", "a", "b"])
    loaded = load_dataset(save_dataset(sparse, os.path.join(tmp_path, "ds")))
    assert not loaded.has_gold and loaded.gold is None
    assert list(loaded.annotations()) == [(ids[0], 0), (ids[1], 1)]
    assert loaded.rater_masks(ids[2]) == [None, None]
    assert loaded.class_names == ["bg", "a", "b"]
    assert loaded.gold_rater == 2


def test_validation_errors(tiny_dataset):
    from ratervar.data.dataset import MultiRaterDataset
    from ratervar.exception.exception import DataFormatError

    images = tiny_dataset.images
    imageId = tiny_dataset.image_ids[0]
    with pytest.raises(DataFormatError):
        MultiRaterDataset(images, {(imageId, 2): np.zeros((16, 16), np.uint8)}, 3, 2)
    with pytest.raises(DataFormatError):
        MultiRaterDataset(images, {("nope", 0): np.zeros((16, 16), np.uint8)}, 3, 2)
    with pytest.raises(DataFormatError):
        MultiRaterDataset(images, {(imageId, 0): np.zeros((8, 16), np.uint8)}, 3, 2)
    with pytest.raises(DataFormatError):
        MultiRaterDataset(images, {(imageId, 0): np.full((16, 16), 3, np.uint8)}, 3, 2)
    with pytest.raises(DataFormatError):
        MultiRaterDataset(images, {}, 1, 2)
    with pytest.raises(DataFormatError):
        MultiRaterDataset(images, {}, 3, 2, class_names=["a"])


def test_load_errors_name_the_file(tmp_path, tiny_dataset):
    from ratervar.data.dataset import load_dataset, save_dataset
    from ratervar.data.io import save_mask
    from ratervar.exception.exception import DataFormatError

    with pytest.raises(DataFormatError, match="does not exist"):
        load_dataset(os.path.join(tmp_path, "missing"))

    root = save_dataset(tiny_dataset, os.path.join(tmp_path, "ds"))
    badMask = os.path.join(root, "raters", "0", f"{tiny_dataset.image_ids[0]}.pgm")
    save_mask(badMask, np.full((16, 16), 7, np.uint8))
    with pytest.raises(DataFormatError) as info:
        load_dataset(root)
    assert info.value.path == badMask

    save_mask(badMask, tiny_dataset.masks[(tiny_dataset.image_ids[0], 0)])
    os.makedirs(os.path.join(root, "raters", "5"))
    with pytest.raises(DataFormatError, match="outside"):
        load_dataset(root)


def test_meta_errors(tmp_path):
    from ratervar.data.dataset import read_meta
    from ratervar.exception.exception import DataFormatError

    with pytest.raises(DataFormatError, match="missing meta.txt"):
        read_meta(str(tmp_path))
    with open(os.path.join(tmp_path, "meta.txt"), "w") as f:
        f.write("num_classes = three\nnum_raters = 2\n")
    with pytest.raises(DataFormatError, match="integers"):
        read_meta(str(tmp_path))
