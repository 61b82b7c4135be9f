"""
Synthetic multi-rater segmentation data with known ground truth.

Ground truth images hold non-overlapping ellipses of foreground classes on
background class 0, rendered with a class-keyed colour and Gaussian texture
noise. Rater masks are derived from the gold mask through parameterized
archetypes:

    faithful                      gold, up to boundary jitter
    confuser:<src>:<dst>:<p>      each src pixel relabelled dst with prob p
    under_segmenter:<p>           each foreground component erased (255) with prob p
    under_segmenter:<p>:bg        same, but erased components are labelled background
    over_grader:<p>               each component of class c becomes min(c+1, C-1) with prob p

The corruption fires per image with probability p_apply; boundary jitter
(dilation into background or erosion to background by a radius drawn from
[0, jitter]) is applied to every component afterwards.
"""

import colorsys
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from ratervar.data.dataset import MultiRaterDataset, save_dataset
from ratervar.exception.exception import ConfigError
from ratervar.misc.config import config_from_text, config_to_text
from ratervar.misc.parallel import parallelize
from ratervar.misc.utils import (
    IGNORE_LABEL,
    UARRAY_2D,
    atomic_write_bytes,
    derive_rng,
    format_key_values,
    get_logger,
    parse_key_values,
)

ARCHETYPE_KINDS = ("faithful", "confuser", "under_segmenter", "over_grader")
SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.txt"
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
PLACEMENT_TRIES = 50


@dataclass(frozen=True)
class RaterArchetype:
    kind: str = "faithful"
    src_class: int = 0
    dst_class: int = 0
    p: float = 0.0
    jitter_radius: int = 2
    p_apply: float = 0.7
    fill: int = IGNORE_LABEL

    def __post_init__(self):
        if self.kind not in ARCHETYPE_KINDS:
            raise ConfigError(f"unknown rater archetype {self.kind!r}, expected one of {ARCHETYPE_KINDS}")
        for name in ("p", "p_apply"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{self.kind}: {name} must lie in [0, 1], got {value}")
        if self.jitter_radius < 0:
            raise ConfigError(f"{self.kind}: jitter radius must be >= 0, got {self.jitter_radius}")
        if self.fill not in (IGNORE_LABEL, 0):
            raise ConfigError(f"{self.kind}: erased components are filled with {IGNORE_LABEL} or 0, got {self.fill}")

    def to_spec(self) -> str:
        if self.kind == "confuser":
            body = f"confuser:{self.src_class}:{self.dst_class}:{self.p!r}"
        elif self.kind == "faithful":
            body = "faithful"
        elif self.kind == "under_segmenter" and self.fill == 0:
            body = f"under_segmenter:{self.p!r}:bg"
        else:
            body = f"{self.kind}:{self.p!r}"
        return f"{body}@j={self.jitter_radius}@p={self.p_apply!r}"


def parse_rater_spec(spec: str, jitter: int = 2, p_apply: float = 0.7) -> List[RaterArchetype]:
    """
    Parse a comma separated rater spec such as
    ``faithful,confuser:2:3:0.8,under_segmenter:0.5@j=0@p=1``.

    Examples
    --------
    >>> [a.kind for a in parse_rater_spec("faithful,over_grader:0.3")]
    ['faithful', 'over_grader']
    """
    archetypes = list()
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        body, *suffixes = item.split("@")
        itemJitter, itemApply = jitter, p_apply
        try:
            for suffix in suffixes:
                key, _, value = suffix.partition("=")
                if key == "j":
                    itemJitter = int(value)
                elif key == "p":
                    itemApply = float(value)
                else:
                    raise ConfigError(f"unknown rater option {suffix!r} in {item!r}")
            kind, *args = body.split(":")
            if kind == "faithful" and not args:
                archetypes.append(RaterArchetype("faithful", jitter_radius=itemJitter, p_apply=itemApply))
            elif kind == "confuser" and len(args) == 3:
                archetypes.append(
                    RaterArchetype(
                        "confuser", int(args[0]), int(args[1]), float(args[2]), itemJitter, itemApply
                    )
                )
            elif kind in ("under_segmenter", "over_grader") and len(args) == 1:
                archetypes.append(
                    RaterArchetype(kind, p=float(args[0]), jitter_radius=itemJitter, p_apply=itemApply)
                )
            elif kind == "under_segmenter" and len(args) == 2 and args[1] == "bg":
                archetypes.append(
                    RaterArchetype(kind, p=float(args[0]), jitter_radius=itemJitter, p_apply=itemApply, fill=0)
                )
            else:
                raise ConfigError(f"malformed rater spec item {item!r}")
        except ValueError as err:
            raise ConfigError(f"malformed rater spec item {item!r}: {err}") from err
    if not archetypes:
        raise ConfigError(f"rater spec {spec!r} names no raters")
    return archetypes


@dataclass(frozen=True)
class GenerationConfig:
    train: int = 200
    test: int = 50
    size: int = 64
    classes: int = 4
    shapes: int = 4
    coverage: float = 1.0
    raters: str = "faithful,faithful,confuser:2:3:0.8,under_segmenter:0.5"
    jitter: int = 2
    p_apply: float = 0.7
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.size < 8 or self.size % 8:
            raise ConfigError(f"image size must be a positive multiple of 8, got {self.size}")
        if not 0.0 <= self.coverage <= 1.0:
            raise ConfigError(f"coverage must lie in [0, 1], got {self.coverage}")
        if self.train < 0 or self.test < 0 or self.shapes < 0:
            raise ConfigError("train, test and shapes must be >= 0")
        for archetype in self.archetypes():
            if archetype.kind == "confuser" and not (
                0 <= archetype.src_class < self.classes and 0 <= archetype.dst_class < self.classes
            ):
                raise ConfigError(f"confuser classes out of range for {self.classes} classes")

    def archetypes(self) -> List[RaterArchetype]:
        return parse_rater_spec(self.raters, self.jitter, self.p_apply)

    def to_text(self) -> str:
        return config_to_text(self)

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "GenerationConfig":
        return cls(**config_from_text(cls, text, source))


def class_colors(numClasses: int) -> np.ndarray:
    """(C, 3) RGB colours in [0, 1] with evenly spaced hues."""
    return np.array(
        [colorsys.hsv_to_rgb(c / numClasses, 0.65, 0.9) for c in range(numClasses)]
    )


def gen_ground_truth(
    size: int = 64,
    numClasses: int = 4,
    shapes: int = 4,
    seed=0,
    noise: float = 0.1,
) -> Tuple[np.ndarray, UARRAY_2D]:
    """
    Render one image and its gold mask.

    Parameters
    ----------
        size : int, default=64
            Height and width.
        numClasses : int, default=4
        shapes : int, default=4
            Number of ellipses attempted; ellipses that cannot be placed
            without touching earlier ones are skipped.
        seed : int or np.random.Generator, default=0
        noise : float, default=0.1
            Standard deviation of the per-pixel colour noise.

    Returns
    -------
        image : np.ndarray
            uint8 (size, size, 3).
        mask : np.ndarray
            uint8 (size, size) with 0 background and classes in [1, C).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(shapes):
        cls = int(rng.integers(1, numClasses))
        taken = ndimage.binary_dilation(mask > 0, structure=FOUR_CONNECTED)
        for _ in range(PLACEMENT_TRIES):
            cy, cx = rng.uniform(0, size, size=2)
            a, b = rng.uniform(size / 10, size / 4, size=2)
            angle = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = dx * np.cos(angle) + dy * np.sin(angle)
            v = -dx * np.sin(angle) + dy * np.cos(angle)
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
            if inside.any() and not np.any(inside & taken):
                mask[inside] = cls
                break

    colors = class_colors(numClasses)
    image = colors[mask] + rng.normal(0.0, noise, size=(size, size, 3))
    image = np.clip(np.rint(np.clip(image, 0.0, 1.0) * 255), 0, 255).astype(np.uint8)
    return image, mask


def _components(mask: np.ndarray):
    """(class, boolean component) for every 4-connected single-class foreground region."""
    for c in np.unique(mask):
        if c == 0 or c == IGNORE_LABEL:
            continue
        labels, count = ndimage.label(mask == c, structure=FOUR_CONNECTED)
        for k in range(1, count + 1):
            yield int(c), labels == k


def _jitter(mask: np.ndarray, radius: int, rng: np.random.Generator) -> np.ndarray:
    """
    Grow or shrink every annotated foreground region (4-connected, classes
    mixed) by a radius drawn from [0, radius]. Grown pixels take the label
    of the nearest region pixel and only replace background; shrunk pixels
    become background.
    """
    out = mask.copy()
    foreground = (mask != 0) & (mask != IGNORE_LABEL)
    labels, count = ndimage.label(foreground, structure=FOUR_CONNECTED)
    for k in range(1, count + 1):
        component = labels == k
        r = int(rng.integers(0, radius + 1))
        grow = rng.random() < 0.5
        if r == 0:
            continue
        if grow:
            grown = ndimage.binary_dilation(component, structure=FOUR_CONNECTED, iterations=r)
            ring = grown & ~component & (out == 0)
            _, (iy, ix) = ndimage.distance_transform_edt(~component, return_indices=True)
            out[ring] = mask[iy[ring], ix[ring]]
        else:
            shrunk = ndimage.binary_erosion(
                component, structure=FOUR_CONNECTED, iterations=r, border_value=1
            )
            out[component & ~shrunk] = 0
    return out


def apply_archetype(
    gold: UARRAY_2D, archetype: RaterArchetype, rng: np.random.Generator, numClasses: int = 4
) -> UARRAY_2D:
    """
    Derive a rater mask from a gold mask.

    Examples
    --------
    >>> import numpy as np
    >>> gold = np.array([[0, 2], [2, 3]], dtype=np.uint8)
    >>> rater = RaterArchetype("confuser", 2, 3, 1.0, jitter_radius=0, p_apply=1.0)
    >>> apply_archetype(gold, rater, np.random.default_rng(0)).tolist()
    [[0, 3], [3, 3]]
    """
    mask = np.asarray(gold).copy()
    fires = rng.random() < archetype.p_apply
    if fires and archetype.kind == "confuser":
        hits = (mask == archetype.src_class) & (rng.random(mask.shape) < archetype.p)
        mask[hits] = archetype.dst_class
    elif fires and archetype.kind == "under_segmenter":
        for _, component in list(_components(gold)):
            if rng.random() < archetype.p:
                mask[component] = archetype.fill
    elif fires and archetype.kind == "over_grader":
        for c, component in list(_components(gold)):
            if rng.random() < archetype.p:
                mask[component] = min(c + 1, numClasses - 1)
    if archetype.jitter_radius > 0:
        mask = _jitter(mask, archetype.jitter_radius, rng)
    return mask


def analytic_confusion(archetype: RaterArchetype, numClasses: int) -> np.ndarray:
    """
    Expected confusion matrix theta[true][observed] over annotated pixels
    for a jitter free archetype.
    """
    theta = np.eye(numClasses)
    q = archetype.p_apply * archetype.p
    if archetype.kind == "confuser" and archetype.src_class != archetype.dst_class:
        theta[archetype.src_class, archetype.src_class] = 1 - q
        theta[archetype.src_class, archetype.dst_class] = q
    elif archetype.kind == "over_grader":
        for c in range(1, numClasses - 1):
            theta[c, c] = 1 - q
            theta[c, c + 1] = q
    elif archetype.kind == "under_segmenter" and archetype.fill == 0:
        for c in range(1, numClasses):
            theta[c, c] = 1 - q
            theta[c, 0] = q
    return theta


@dataclass
class GeneratedSplit:
    dataset: MultiRaterDataset
    masks_present: int
    masks_total: int


def _generate_image(cfg: GenerationConfig, archetypes, splitIndex: int, idx: int):
    image, gold = gen_ground_truth(
        cfg.size, cfg.classes, cfg.shapes, derive_rng(cfg.seed, splitIndex, idx, 0), cfg.noise
    )
    masks = dict()
    for r, archetype in enumerate(archetypes):
        present = derive_rng(cfg.seed, splitIndex, idx, 1000 + r).random() < cfg.coverage
        if present:
            rng = derive_rng(cfg.seed, splitIndex, idx, 1 + r)
            masks[r] = apply_archetype(gold, archetype, rng, cfg.classes)
    return image, gold, masks


def generate_split(
    cfg: GenerationConfig, split: str, workers: int = 1, pbar: bool = False
) -> GeneratedSplit:
    """Build one split in memory. Image i of a split always gets the same streams."""
    splitIndex = SPLITS.index(split)
    count = cfg.train if split == "train" else cfg.test
    archetypes = cfg.archetypes()

    @parallelize
    def _one(idx):
        return _generate_image(cfg, archetypes, splitIndex, idx)

    generated = list()
    chunk = max(workers, 1) * 8
    with tqdm(total=count, desc=f"Generating {split}", disable=not pbar) as bar:
        for start in range(0, count, chunk):
            part = list(range(start, min(start + chunk, count)))
            generated.extend(_one(part, workers=workers))
            bar.update(len(part))

    images, gold, masks = dict(), dict(), dict()
    for idx, (image, goldMask, raterMasks) in enumerate(generated):
        imageId = f"{split}_{idx:04d}"
        images[imageId] = image
        gold[imageId] = goldMask
        for r, mask in raterMasks.items():
            masks[(imageId, r)] = mask
    dataset = MultiRaterDataset(
        images=images,
        masks=masks,
        num_classes=cfg.classes,
        num_raters=len(archetypes),
        gold=gold,
    )
    return GeneratedSplit(dataset, len(masks), count * len(archetypes))


def gen_dataset(
    cfg: GenerationConfig, outDir: str, workers: int = 1, pbar: bool = False
) -> Dict[str, GeneratedSplit]:
    """
    Write ``<outDir>/train`` and ``<outDir>/test`` datasets and a
    ``manifest.txt`` recording the generation config, every archetype
    parameter and the exact number of rater masks written per split.

    Returns
    -------
        splits : Dict[str, GeneratedSplit]
    """
    logger = get_logger("ratervar.data.synthesize")
    splits = dict()
    for split in SPLITS:
        splits[split] = generate_split(cfg, split, workers=workers, pbar=pbar)
        save_dataset(splits[split].dataset, os.path.join(outDir, split))
        logger.info(
            f"{split}: {len(splits[split].dataset)} images, "
            f"{splits[split].masks_present}/{splits[split].masks_total} rater masks"
        )

    entries = parse_key_values(cfg.to_text())
    for r, archetype in enumerate(cfg.archetypes()):
        entries[f"rater.{r}.kind"] = archetype.kind
        entries[f"rater.{r}.src_class"] = archetype.src_class
        entries[f"rater.{r}.dst_class"] = archetype.dst_class
        entries[f"rater.{r}.p"] = archetype.p
        entries[f"rater.{r}.jitter_radius"] = archetype.jitter_radius
        entries[f"rater.{r}.p_apply"] = archetype.p_apply
        entries[f"rater.{r}.fill"] = archetype.fill
    for split, generated in splits.items():
        entries[f"masks_present.{split}"] = generated.masks_present
        entries[f"masks_total.{split}"] = generated.masks_total
    atomic_write_bytes(
        os.path.join(outDir, MANIFEST_NAME), format_key_values(entries).encode("utf-8")
    )
    return splits


def read_manifest(path: str) -> GenerationConfig:
    """Generation config recorded in a manifest, for replaying a dataset."""
    with open(path, "r") as f:
        entries = parse_key_values(f.read(), source=path)
    known = {k: v for k, v in entries.items() if "." not in k}
    text = format_key_values(known)
    return GenerationConfig.from_text(text, source=path)
