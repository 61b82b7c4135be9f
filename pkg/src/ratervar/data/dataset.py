"""
In-memory multi-rater dataset and its on-disk layout:

    <dir>/meta.txt              num_classes, num_raters, class_names
    <dir>/images/<id>.ppm
    <dir>/raters/<r>/<id>.pgm   missing file = image not annotated by r
    <dir>/gold/<id>.pgm         optional
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ratervar.data.io import ensure_dir, load_image, load_mask, save_image, save_mask
from ratervar.exception.exception import DataFormatError, check_class_ids
from ratervar.misc.utils import (
    IGNORE_LABEL,
    UARRAY_2D,
    format_key_values,
    get_logger,
    parse_key_values,
)

META_FILE = "meta.txt"


def default_class_names(numClasses: int) -> List[str]:
    return ["background"] + [f"class_{c}" for c in range(1, numClasses)]


@dataclass
class MultiRaterDataset:
    """
    Images plus a sparse (image id, rater id) -> mask mapping and optional
    gold masks.

    Parameters
    ----------
        images : Dict[str, np.ndarray]
            uint8 (H, W, 3) images keyed by id.
        masks : Dict[Tuple[str, int], np.ndarray]
            uint8 (H, W) class maps; 255 marks unannotated pixels.
        num_classes : int
        num_raters : int
        gold : Dict[str, np.ndarray], optional
        class_names : List[str], optional
    """

    images: Dict[str, np.ndarray]
    masks: Dict[Tuple[str, int], UARRAY_2D]
    num_classes: int
    num_raters: int
    gold: Optional[Dict[str, UARRAY_2D]] = None
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = default_class_names(self.num_classes)
        self.validate()

    def validate(self):
        if self.num_classes < 2 or self.num_raters < 1:
            raise DataFormatError(
                f"need num_classes >= 2 and num_raters >= 1, got {self.num_classes}, {self.num_raters}"
            )
        if len(self.class_names) != self.num_classes:
            raise DataFormatError(
                f"{len(self.class_names)} class names for {self.num_classes} classes"
            )
        for (imageId, r), mask in self.masks.items():
            self._check_mask(imageId, mask, f"rater {r} mask of {imageId}")
            if not 0 <= r < self.num_raters:
                raise DataFormatError(f"rater id {r} outside [0, {self.num_raters})")
        for imageId, mask in (self.gold or dict()).items():
            self._check_mask(imageId, mask, f"gold mask of {imageId}")

    def _check_mask(self, imageId: str, mask: np.ndarray, what: str):
        if imageId not in self.images:
            raise DataFormatError(f"{what} refers to unknown image")
        shape = self.images[imageId].shape[:2]
        if mask.shape != shape:
            raise DataFormatError(f"{what} has shape {mask.shape}, image is {shape}")
        check_class_ids(mask, self.num_classes, IGNORE_LABEL)

    @property
    def image_ids(self) -> List[str]:
        return sorted(self.images)

    @property
    def gold_rater(self) -> int:
        return self.num_raters

    @property
    def has_gold(self) -> bool:
        return bool(self.gold)

    def rater_masks(self, imageId: str) -> List[Optional[UARRAY_2D]]:
        """Masks of every rater for one image, None where absent."""
        return [self.masks.get((imageId, r)) for r in range(self.num_raters)]

    def annotations(self) -> Iterator[Tuple[str, int]]:
        for imageId in self.image_ids:
            for r in range(self.num_raters):
                if (imageId, r) in self.masks:
                    yield imageId, r

    def __len__(self) -> int:
        return len(self.images)


def _meta_entries(dataset: MultiRaterDataset):
    return {
        "num_classes": dataset.num_classes,
        "num_raters": dataset.num_raters,
        "class_names": dataset.class_names,
    }


def save_dataset(dataset: MultiRaterDataset, directory: str) -> str:
    ensure_dir(directory)
    with open(os.path.join(directory, META_FILE), "w") as f:
        f.write(format_key_values(_meta_entries(dataset)))
    imageDir = ensure_dir(os.path.join(directory, "images"))
    for imageId, image in dataset.images.items():
        save_image(os.path.join(imageDir, f"{imageId}.ppm"), image)
    for r in range(dataset.num_raters):
        ensure_dir(os.path.join(directory, "raters", str(r)))
    for (imageId, r), mask in dataset.masks.items():
        save_mask(os.path.join(directory, "raters", str(r), f"{imageId}.pgm"), mask)
    if dataset.gold:
        goldDir = ensure_dir(os.path.join(directory, "gold"))
        for imageId, mask in dataset.gold.items():
            save_mask(os.path.join(goldDir, f"{imageId}.pgm"), mask)
    get_logger("ratervar.data.dataset").info(
        f"Wrote dataset to {directory}: {len(dataset)} images, {len(dataset.masks)} rater masks"
    )
    return directory


def read_meta(directory: str) -> Dict[str, object]:
    path = os.path.join(directory, META_FILE)
    if not os.path.isfile(path):
        raise DataFormatError("missing meta.txt", path=path)
    with open(path, "r") as f:
        try:
            entries = parse_key_values(f.read(), source=path)
        except ValueError as err:
            raise DataFormatError(str(err), path=path) from err
    try:
        numClasses = int(entries["num_classes"])
        numRaters = int(entries["num_raters"])
    except (KeyError, ValueError) as err:
        raise DataFormatError(f"num_classes and num_raters must be integers: {err}", path=path) from err
    names = entries.get("class_names")
    classNames = [n.strip() for n in names.split(",")] if names else default_class_names(numClasses)
    return {"num_classes": numClasses, "num_raters": numRaters, "class_names": classNames}


def load_dataset(directory: str) -> MultiRaterDataset:
    """
    Load a dataset directory. A missing ``gold/`` directory yields a dataset
    without gold; missing rater files mean the image is unannotated by that
    rater.

    Raises
    ------
        DataFormatError
            If the directory or its meta/images are missing, or any file is
            malformed or inconsistent. The message carries the path.
    """
    if not os.path.isdir(directory):
        raise DataFormatError("dataset directory does not exist", path=directory)
    meta = read_meta(directory)
    numClasses = meta["num_classes"]
    numRaters = meta["num_raters"]

    imageDir = os.path.join(directory, "images")
    if not os.path.isdir(imageDir):
        raise DataFormatError("missing images directory", path=imageDir)
    images = dict()
    for name in sorted(os.listdir(imageDir)):
        if name.endswith(".ppm"):
            images[name[:-4]] = load_image(os.path.join(imageDir, name))

    def _load_masks(maskDir: str) -> Dict[str, UARRAY_2D]:
        found = dict()
        for name in sorted(os.listdir(maskDir)):
            if not name.endswith(".pgm"):
                continue
            imageId = name[:-4]
            path = os.path.join(maskDir, name)
            if imageId not in images:
                raise DataFormatError("mask has no matching image", path=path)
            mask = load_mask(path, numClasses)
            if mask.shape != images[imageId].shape[:2]:
                raise DataFormatError(
                    f"mask shape {mask.shape} differs from image {images[imageId].shape[:2]}",
                    path=path,
                )
            found[imageId] = mask
        return found

    masks = dict()
    raterRoot = os.path.join(directory, "raters")
    if os.path.isdir(raterRoot):
        for entry in sorted(os.listdir(raterRoot)):
            if not entry.isdigit() or int(entry) >= numRaters:
                raise DataFormatError(
                    f"rater directory {entry!r} outside [0, {numRaters})",
                    path=os.path.join(raterRoot, entry),
                )
        for r in range(numRaters):
            raterDir = os.path.join(raterRoot, str(r))
            if os.path.isdir(raterDir):
                for imageId, mask in _load_masks(raterDir).items():
                    masks[(imageId, r)] = mask

    goldDir = os.path.join(directory, "gold")
    gold = _load_masks(goldDir) if os.path.isdir(goldDir) else None

    get_logger("ratervar.data.dataset").info(
        f"Loaded {directory}: {len(images)} images, {len(masks)} rater masks, "
        f"gold {'present' if gold else 'absent'}"
    )
    return MultiRaterDataset(
        images=images,
        masks=masks,
        num_classes=numClasses,
        num_raters=numRaters,
        gold=gold,
        class_names=meta["class_names"],
    )
