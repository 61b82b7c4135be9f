import hashlib
import logging
import os
import tempfile
from typing import Dict, Iterable, Tuple, Union

import numpy as np
import numpy.typing as npt

from ratervar.misc.logging import LoggerManager

FARRAY_1D = npt.NDArray[np.float64]
FARRAY_2D = npt.NDArray[np.float64]
UARRAY_2D = npt.NDArray[np.uint8]

IGNORE_LABEL = 255


def get_logger(name: str) -> logging.Logger:
    """
    Return a child of the shared ratervar logger. Handlers and levels are
    configured once through LoggerManager.config_logger.
    """
    return LoggerManager.get_logger(name)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build an independent generator for a (seed, key...) tuple. Used so that
    per-image and per-rater streams do not depend on processing order.

    Parameters
    ----------
        seed : int
            Base seed of the run.
        *keys : int
            Additional integers identifying the stream (image index, split
            id, rater id, ...).

    Returns
    -------
        rng : np.random.Generator
            PCG64 generator seeded from the combined entropy.

    Examples
    --------
    >>> a = derive_rng(7, 0, 12).random()
    >>> b = derive_rng(7, 0, 12).random()
    >>> a == b
    True
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sha256_file(path: str, chunkSize: int = 1 << 16) -> str:
    """
    Hex sha256 digest of a file.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunkSize), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path: str, payload: bytes):
    """
    Write payload next to path and move it into place, so readers never see
    a half written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmpPath = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmpPath, path)
    except BaseException:
        if os.path.exists(tmpPath):
            os.remove(tmpPath)
        raise


def format_key_values(entries: Union[Dict[str, object], Iterable[Tuple[str, object]]]) -> str:
    """
    Render entries in the flat ``key = value`` text format used for config
    files, dataset meta files, manifests and prediction sidecars.
    """
    if isinstance(entries, dict):
        entries = entries.items()
    lines = [f"{key} = {_format_value(value)}" for key, value in entries]
    return "\n".join(lines) + "\n"


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def parse_key_values(text: str, source: str = "<string>") -> Dict[str, str]:
    """
    Parse ``key = value`` lines. Blank lines and lines starting with '#'
    are skipped. Values stay strings; typed parsing is up to the caller.

    Parameters
    ----------
        text : str
            File contents.
        source : str, default="<string>"
            Name used in error messages.

    Returns
    -------
        entries : Dict[str, str]
            Parsed entries in file order.

    Raises
    ------
        ValueError
            If a line has no '=' or a key repeats.
    """
    entries: Dict[str, str] = dict()
    for lineNo, rawLine in enumerate(text.splitlines(), start=1):
        line = rawLine.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineNo}: expected 'key = value', got {rawLine!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in entries:
            raise ValueError(f"{source}:{lineNo}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")

