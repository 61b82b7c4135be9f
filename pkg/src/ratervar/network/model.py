"""
Segmentation backbone and latent-conditioned head.

The backbone is a three level encoder-decoder. Each encoder level runs two
3x3 convolutions with ReLU and then a 2x2 max pool (16, 32 and 64 channels);
a bottleneck pair of 3x3 convolutions runs at 1/8 resolution, and the decoder
mirrors the encoder with nearest 2x upsampling and skip concatenation. A
final 1x1 convolution maps to the L feature channels.

The head sees the features concatenated with the broadcast latent sample and
applies three 1x1 convolutions (16, 16, C) followed by a channel softmax.
"""

from typing import Dict, List, Tuple

import numpy as np
import numpy.typing as npt

from ratervar.autodiff import ops
from ratervar.autodiff.tensor import Tensor, as_tensor
from ratervar.exception.exception import ShapeError
from ratervar.misc.utils import get_logger

FEATURE_CHANNELS = 16
HEAD_WIDTH = 16
DOWNSAMPLE = 8

# (name, input channels, output channels, kernel size)
BACKBONE_LAYERS: List[Tuple[str, int, int, int]] = [
    ("enc1.0", 3, 16, 3),
    ("enc1.1", 16, 16, 3),
    ("enc2.0", 16, 32, 3),
    ("enc2.1", 32, 32, 3),
    ("enc3.0", 32, 64, 3),
    ("enc3.1", 64, 64, 3),
    ("mid.0", 64, 64, 3),
    ("mid.1", 64, 64, 3),
    ("dec3.0", 128, 64, 3),
    ("dec3.1", 64, 64, 3),
    ("dec2.0", 96, 32, 3),
    ("dec2.1", 32, 32, 3),
    ("dec1.0", 48, 16, 3),
    ("dec1.1", 16, 16, 3),
]


def _he_conv(rng: np.random.Generator, cin: int, cout: int, k: int, dtype):
    std = np.sqrt(2.0 / (cin * k * k))
    weight = rng.normal(0.0, std, size=(cout, cin, k, k))
    bias = np.zeros(cout)
    return (
        Tensor.parameter(weight, dtype=dtype),
        Tensor.parameter(bias, dtype=dtype),
    )


class SegModel:
    """
    Backbone parameters ``omega`` and head parameters ``theta``. Both are
    dicts mapping '<layer>.weight' / '<layer>.bias' to leaf tensors.

    Parameters
    ----------
        omega : Dict[str, Tensor]
            Backbone parameters.
        theta : Dict[str, Tensor]
            Head parameters ('head.0', 'head.1', 'head.2').
        numClasses : int
            Output classes C (>= 2).
        latentDim : int, default=8
            Latent dimension D expected by the head.
        featureChannels : int, default=16
            Backbone output channels L.
    """

    def __init__(
        self,
        omega: Dict[str, Tensor],
        theta: Dict[str, Tensor],
        numClasses: int,
        latentDim: int = 8,
        featureChannels: int = FEATURE_CHANNELS,
    ):
        self.omega = omega
        self.theta = theta
        self.num_classes = int(numClasses)
        self.latent_dim = int(latentDim)
        self.feature_channels = int(featureChannels)

        headIn = theta["head.0.weight"].shape[1]
        headOut = theta["head.2.weight"].shape[0]
        if headIn != self.feature_channels + self.latent_dim:
            raise ShapeError(
                f"head expects {headIn} input channels but L + D = "
                f"{self.feature_channels} + {self.latent_dim}"
            )
        if headOut != self.num_classes:
            raise ShapeError(f"head emits {headOut} channels but C = {self.num_classes}")

    @classmethod
    def init(
        cls,
        numClasses: int,
        latentDim: int = 8,
        featureChannels: int = FEATURE_CHANNELS,
        seed: int = 0,
        dtype=np.float32,
    ) -> "SegModel":
        """
        He-initialized weights, zero biases.

        Examples
        --------
        >>> model = SegModel.init(4, seed=1)
        >>> model.theta["head.2.weight"].shape
        (4, 16, 1, 1)
        """
        if numClasses < 2:
            raise ShapeError(f"need at least 2 classes, got {numClasses}")
        rng = np.random.default_rng(seed)
        omega = dict()
        for name, cin, cout, k in BACKBONE_LAYERS:
            omega[f"{name}.weight"], omega[f"{name}.bias"] = _he_conv(rng, cin, cout, k, dtype)
        omega["out.weight"], omega["out.bias"] = _he_conv(rng, 16, featureChannels, 1, dtype)

        theta = dict()
        widths = [featureChannels + latentDim, HEAD_WIDTH, HEAD_WIDTH, numClasses]
        for i in range(3):
            theta[f"head.{i}.weight"], theta[f"head.{i}.bias"] = _he_conv(
                rng, widths[i], widths[i + 1], 1, dtype
            )
        for name, tensor in list(omega.items()):
            tensor.name = f"omega.{name}"
        for name, tensor in list(theta.items()):
            tensor.name = f"theta.{name}"

        get_logger("ratervar.network.model").debug(
            f"Initialized SegModel C={numClasses} D={latentDim} L={featureChannels}"
        )
        return cls(omega, theta, numClasses, latentDim, featureChannels)

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"omega.{k}": v for k, v in self.omega.items()}
        params.update({f"theta.{k}": v for k, v in self.theta.items()})
        return params

    @property
    def dtype(self):
        return self.theta["head.0.weight"].dtype


def _conv(params: Dict[str, Tensor], name: str, x: Tensor, activate: bool = True) -> Tensor:
    out = ops.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], padding="same")
    return ops.relu(out) if activate else out


def _block(params, prefix, x):
    return _conv(params, f"{prefix}.1", _conv(params, f"{prefix}.0", x))


def extract_features(model: SegModel, image) -> Tensor:
    """
    Full resolution feature map v = f_omega(x).

    Parameters
    ----------
        model : SegModel
        image : Tensor or np.ndarray
            Batch of shape (N, 3, H, W) with H and W divisible by 8.

    Returns
    -------
        features : Tensor
            Shape (N, L, H, W).

    Raises
    ------
        ShapeError
            If the input is not 3-channel or H, W are not multiples of 8.
    """
    x = as_tensor(image, model.dtype)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected an (N, 3, H, W) image batch, got shape {x.shape}")
    H, W = x.shape[2], x.shape[3]
    if H % DOWNSAMPLE or W % DOWNSAMPLE:
        raise ShapeError(
            f"image size {H}x{W} is not divisible by {DOWNSAMPLE}; "
            f"pad the image to a multiple of {DOWNSAMPLE} pixels"
        )
    p = model.omega
    e1 = _block(p, "enc1", x)
    e2 = _block(p, "enc2", ops.maxpool2x2(e1))
    e3 = _block(p, "enc3", ops.maxpool2x2(e2))
    mid = _block(p, "mid", ops.maxpool2x2(e3))

    d3 = _block(p, "dec3", ops.concat_channels(ops.upsample_nearest2x(mid), e3))
    d2 = _block(p, "dec2", ops.concat_channels(ops.upsample_nearest2x(d3), e2))
    d1 = _block(p, "dec1", ops.concat_channels(ops.upsample_nearest2x(d2), e1))
    return _conv(p, "out", d1, activate=False)


def segment(model: SegModel, features: Tensor, z) -> Tensor:
    """
    Class probabilities f_theta(v, z) for one latent sample z shared by the
    whole batch.
    """
    if features.ndim != 4 or features.shape[1] != model.feature_channels:
        raise ShapeError(
            f"features must be (N, {model.feature_channels}, H, W), got {features.shape}"
        )
    z = as_tensor(z, model.dtype)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"latent sample must have shape ({model.latent_dim},), got {z.shape}")
    N, _, H, W = features.shape
    x = ops.concat_channels(features, ops.broadcast_latent(z, N, H, W))
    x = _conv(model.theta, "head.0", x)
    x = _conv(model.theta, "head.1", x)
    logits = _conv(model.theta, "head.2", x, activate=False)
    return ops.softmax_channels(logits)


def image_to_array(image: npt.NDArray, dtype=np.float32) -> np.ndarray:
    """uint8 (H, W, 3) image to a (3, H, W) array scaled to [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) RGB image, got shape {image.shape}")
    return (image.astype(np.float64) / 255.0).transpose(2, 0, 1).astype(dtype)


def images_to_tensor(images, dtype=np.float32) -> Tensor:
    return Tensor(np.stack([image_to_array(im, dtype) for im in images]))
