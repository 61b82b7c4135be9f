"""
Binary netpbm IO: RGB images as P6 (PPM), class masks as P5 (PGM). Only
8-bit files (maxval 255) are read or written.
"""

import os

import numpy as np

from ratervar.exception.exception import DataFormatError, check_class_ids
from ratervar.misc.utils import IGNORE_LABEL, UARRAY_2D, atomic_write_bytes

MAXVAL = 255


def _encode(magic: str, array: np.ndarray) -> bytes:
    height, width = array.shape[:2]
    header = f"{magic}\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    return header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()


def _read_token(payload: bytes, offset: int, path: str):
    n = len(payload)
    while offset < n:
        c = payload[offset : offset + 1]
        if c == b"#":
            while offset < n and payload[offset : offset + 1] not in (b"\n", b"\r"):
                offset += 1
        elif c.isspace():
            offset += 1
        else:
            break
    start = offset
    while offset < n and not payload[offset : offset + 1].isspace():
        offset += 1
    if start == offset:
        raise DataFormatError("unexpected end of header", path=path)
    return payload[start:offset].decode("ascii", errors="replace"), offset


def read_pnm(path: str, magic: str) -> np.ndarray:
    """
    Parse a binary PGM ('P5') or PPM ('P6') file.

    Returns
    -------
        array : np.ndarray
            uint8 array of shape (H, W) for P5 and (H, W, 3) for P6.

    Raises
    ------
        DataFormatError
            On a wrong magic number, a malformed header, maxval other than
            255 or a payload whose size disagrees with the header.
    """
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as err:
        raise DataFormatError(f"cannot read file: {err}", path=path) from err

    found, offset = _read_token(payload, 0, path)
    if found != magic:
        raise DataFormatError(f"expected magic {magic}, found {found!r}", path=path)
    fields = list()
    for _ in range(3):
        token, offset = _read_token(payload, offset, path)
        if not token.isdigit():
            raise DataFormatError(f"malformed header field {token!r}", path=path)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != MAXVAL:
        raise DataFormatError(f"maxval must be {MAXVAL}, got {maxval}", path=path)
    if width < 1 or height < 1:
        raise DataFormatError(f"invalid dimensions {width}x{height}", path=path)
    # exactly one whitespace byte separates the header from the raster
    offset += 1

    channels = 3 if magic == "P6" else 1
    expected = width * height * channels
    raster = payload[offset:]
    if len(raster) != expected:
        raise DataFormatError(
            f"raster has {len(raster)} bytes, header {width}x{height}x{channels} needs {expected}",
            path=path,
        )
    array = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return array.reshape(shape).copy()


def save_image(path: str, image: np.ndarray):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DataFormatError(
            f"image must be uint8 (H, W, 3), got {image.dtype} {image.shape}", path=path
        )
    atomic_write_bytes(path, _encode("P6", image))


def load_image(path: str) -> np.ndarray:
    return read_pnm(path, "P6")


def save_mask(path: str, mask: UARRAY_2D):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataFormatError(f"mask must be 2-D, got shape {mask.shape}", path=path)
    if mask.dtype != np.uint8:
        if mask.min(initial=0) < 0 or mask.max(initial=0) > MAXVAL:
            raise DataFormatError("mask values must fit in 0..255", path=path)
        mask = mask.astype(np.uint8)
    atomic_write_bytes(path, _encode("P5", mask))


def load_mask(path: str, numClasses: int = None, ignoreLabel: int = IGNORE_LABEL) -> UARRAY_2D:
    """
    Read a class mask. When ``numClasses`` is given every pixel must be a
    class id below it or the ignore label.
    """
    mask = read_pnm(path, "P5")
    if numClasses is not None:
        check_class_ids(mask, numClasses, ignoreLabel, path=path)
    return mask


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
