"""
Binary checkpoint of model, rater bank and optimizer state.

Layout (all integers little endian):

    b"PNN1"  u32 version  u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 ndim, u32 dims..., f32 payload

Metadata (class count, latent dimension, feature channels, prior variance,
epoch) travels as 0-d tensors under the ``meta.`` prefix. The prior variance is
also stored bit-exact as ``meta.prior_var.f64``, its float64 bytes split into
two f32 words. Adam moments are
stored as ``adam.<group>.m.<param>`` / ``adam.<group>.v.<param>`` and step
counts as ``adam.<group>.step.<param>``.
"""

import re
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ratervar.autodiff.tensor import Tensor
from ratervar.exception.exception import CheckpointError
from ratervar.latent.gaussian import GaussianLatent, RaterBank
from ratervar.misc.utils import atomic_write_bytes, get_logger
from ratervar.network.model import SegModel
from ratervar.train.adam import AdamState, OptimizerState

MAGIC = b"PNN1"
VERSION = 1


def _float64_words(value: float) -> np.ndarray:
    return np.array([value], dtype="<f8").view("<f4")


def _words_float64(words: np.ndarray) -> float:
    return float(np.ascontiguousarray(words, dtype="<f4").view("<f8")[0])


@dataclass
class Checkpoint:
    model: SegModel
    bank: RaterBank
    optimizer: OptimizerState


def encode_tensors(tensors: List[Tuple[str, np.ndarray]]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors:
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError(
                f"{self.path}: truncated checkpoint (needed {size} bytes at offset "
                f"{self.offset}, file has {len(self.payload)})"
            )
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_tensors(payload: bytes, path: str = "<bytes>") -> Dict[str, np.ndarray]:
    """
    Parse checkpoint bytes into an ordered name -> float32 array mapping.

    Raises
    ------
        CheckpointError
            On a bad magic, a version newer than this reader, truncation or
            trailing bytes.
    """
    reader = _Reader(payload, path)
    magic = reader.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, count = reader.unpack("<II")
    if version > VERSION or version == 0:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (this build reads version {VERSION})"
        )
    tensors = dict()
    for _ in range(count):
        (nameLen,) = reader.unpack("<H")
        try:
            name = reader.take(nameLen).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointError(f"{path}: tensor name is not valid UTF-8") from err
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float32)
    if reader.offset != len(payload):
        raise CheckpointError(
            f"{path}: {len(payload) - reader.offset} trailing bytes after {count} tensors"
        )
    return tensors


def _adam_entries(group: str, state: AdamState) -> List[Tuple[str, np.ndarray]]:
    entries = list()
    for name in state.m:
        entries.append((f"adam.{group}.m.{name}", state.m[name]))
        entries.append((f"adam.{group}.v.{name}", state.v[name]))
        entries.append((f"adam.{group}.step.{name}", np.array(state.steps[name])))
    return entries


def save_checkpoint(
    model: SegModel, bank: RaterBank, optState: Optional[OptimizerState], path: str
) -> str:
    """
    Write model, bank and optimizer state to ``path`` atomically.

    Returns
    -------
        path : str
    """
    optState = optState or OptimizerState()
    tensors = [
        ("meta.num_classes", np.array(model.num_classes)),
        ("meta.latent_dim", np.array(model.latent_dim)),
        ("meta.feature_channels", np.array(model.feature_channels)),
        ("meta.prior_var", np.array(bank.prior_var)),
        ("meta.prior_var.f64", _float64_words(bank.prior_var)),
        ("meta.epoch", np.array(optState.epoch)),
    ]
    tensors += [(name, t.data) for name, t in model.parameters().items()]
    tensors += [(name, t.data) for name, t in bank.parameters().items()]
    tensors += _adam_entries("net", optState.net)
    tensors += _adam_entries("latent", optState.latent)

    atomic_write_bytes(path, encode_tensors(tensors))
    get_logger("ratervar.train.checkpoint").info(
        f"Wrote checkpoint {path} ({len(tensors)} tensors, epoch {optState.epoch})"
    )
    return path


_ADAM_KEY = re.compile(r"^adam\.(net|latent)\.(m|v|step)\.(.+)$")
_LATENT_KEY = re.compile(r"^latent\.(\d+)\.(mu|chol_raw)$")


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint. Parameters come back as
    float32 leaf tensors bit-identical to what was saved.
    """
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as err:
        raise CheckpointError(f"{path}: cannot read checkpoint: {err}") from err
    tensors = decode_tensors(payload, path)

    try:
        numClasses = int(tensors["meta.num_classes"])
        latentDim = int(tensors["meta.latent_dim"])
        featureChannels = int(tensors["meta.feature_channels"])
        priorVar = float(tensors["meta.prior_var"])
        if "meta.prior_var.f64" in tensors:
            priorVar = _words_float64(tensors["meta.prior_var.f64"])
        epoch = int(tensors["meta.epoch"])
    except KeyError as err:
        raise CheckpointError(f"{path}: missing metadata tensor {err}") from err

    omega, theta = dict(), dict()
    latentParts: Dict[int, Dict[str, np.ndarray]] = dict()
    opt = OptimizerState(epoch=epoch)
    for name, array in tensors.items():
        if name.startswith("omega."):
            omega[name[6:]] = Tensor.parameter(array, name=name)
        elif name.startswith("theta."):
            theta[name[6:]] = Tensor.parameter(array, name=name)
        elif _LATENT_KEY.match(name):
            r, kind = _LATENT_KEY.match(name).groups()
            latentParts.setdefault(int(r), dict())[kind] = array
        elif _ADAM_KEY.match(name):
            group, kind, param = _ADAM_KEY.match(name).groups()
            state = opt.net if group == "net" else opt.latent
            if kind == "step":
                state.steps[param] = int(array)
            else:
                getattr(state, kind)[param] = array.copy()

    if sorted(latentParts) != list(range(len(latentParts))) or len(latentParts) < 2:
        raise CheckpointError(f"{path}: latent bank entries are incomplete: {sorted(latentParts)}")
    latents = list()
    for r in range(len(latentParts)):
        parts = latentParts[r]
        if set(parts) != {"mu", "chol_raw"}:
            raise CheckpointError(f"{path}: latent {r} needs mu and chol_raw, found {sorted(parts)}")
        latents.append(
            GaussianLatent(
                Tensor.parameter(parts["mu"], name=f"latent.{r}.mu"),
                Tensor.parameter(parts["chol_raw"], name=f"latent.{r}.chol_raw"),
            )
        )
    try:
        model = SegModel(omega, theta, numClasses, latentDim, featureChannels)
    except KeyError as err:
        raise CheckpointError(f"{path}: missing model tensor {err}") from err
    bank = RaterBank(latents, priorVar)
    get_logger("ratervar.train.checkpoint").info(f"Loaded checkpoint {path} (epoch {epoch})")
    return Checkpoint(model, bank, opt)
