"""
Differentiable tensor operations used by the segmentation network and the
latent bank. Image tensors use the (batch, channels, height, width) layout.
"""

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ratervar.autodiff.tensor import Tensor
from ratervar.exception.exception import NumericalError, ShapeError


def _require_4d(x: Tensor, what: str):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an (N, C, H, W) tensor, got shape {x.shape}")


def conv2d(
    x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, padding: str = "same"
) -> Tensor:
    """
    2D cross-correlation (no kernel flip) using a sliding-window im2col and
    a tensordot against the kernel.

    Parameters
    ----------
        x : Tensor
            Input of shape (N, Cin, H, W).
        kernel : Tensor
            Weights of shape (Cout, Cin, kh, kw) with odd kh, kw.
        bias : Tensor, optional
            Shape (Cout,).
        padding : str, default="same"
            'same' zero-pads so the output keeps H and W; 'valid' uses only
            full windows.

    Returns
    -------
        out : Tensor
            Shape (N, Cout, H', W').

    Raises
    ------
        ShapeError
            On any mismatch between input, kernel and bias dimensions.
    """
    _require_4d(x, "conv2d")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (Cout, Cin, kh, kw), got {kernel.shape}")
    N, Cin, H, W = x.shape
    Cout, kCin, kh, kw = kernel.shape
    if kCin != Cin:
        raise ShapeError(f"conv2d input has Cin={Cin} channels but kernel expects Cin={kCin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel spatial dims must be odd, got kh={kh}, kw={kw}")
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"conv2d bias must have shape ({Cout},), got {bias.shape}")
    if padding == "same":
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph, pw = 0, 0
        if H < kh or W < kw:
            raise ShapeError(f"conv2d 'valid' needs H>={kh} and W>={kw}, got H={H}, W={W}")
    else:
        raise ValueError(f"unknown padding {padding!r}, expected 'same' or 'valid'")

    if kh == 1 and kw == 1:
        windows = None
        weights = kernel.data[:, :, 0, 0]
        out = np.tensordot(x.data, weights, axes=([1], [1])).transpose(0, 3, 1, 2)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def vjp(g):
        gx = gk = gb = None
        if kernel.requires_grad:
            if windows is None:
                gk = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            else:
                gk = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            if windows is None:
                gx = np.tensordot(g, kernel.data[:, :, 0, 0], axes=([1], [0]))
                gx = gx.transpose(0, 3, 1, 2)
            else:
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gWindows = sliding_window_view(gp, (kh, kw), axis=(2, 3))
                flipped = kernel.data[:, :, ::-1, ::-1]
                gxp = np.tensordot(gWindows, flipped, axes=([1, 4, 5], [0, 2, 3]))
                gx = gxp.transpose(0, 3, 1, 2)[:, :, ph : ph + H, pw : pw + W]
        if bias is None:
            return gx, gk
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out, parents, vjp, "conv2d")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def softmax_channels(logits: Tensor) -> Tensor:
    """
    Per-pixel softmax over the channel axis, stabilized by subtracting the
    channel maximum.
    """
    _require_4d(logits, "softmax_channels")
    if logits.shape[1] < 2:
        raise ShapeError(f"softmax_channels needs C >= 2, got C={logits.shape[1]}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericalError("softmax_channels received non-finite logits")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor(s, (logits,), vjp, "softmax")


def maxpool2x2(x: Tensor) -> Tensor:
    """
    2x2 max pooling with stride 2. Ties go to the first maximal element in
    row-major order, i.e. the top-left one.
    """
    _require_4d(x, "maxpool2x2")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2x2 needs even H and W, got H={H}, W={W}")
    blocks = (
        x.data.reshape(N, C, H // 2, 2, W // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(N, C, H // 2, W // 2, 4)
    )
    argmax = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, argmax, axis=-1)[..., 0]

    def vjp(g):
        scattered = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(scattered, argmax, g[..., None], axis=-1)
        scattered = scattered.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (scattered.reshape(N, C, H, W),)

    return Tensor(out, (x,), vjp, "maxpool2x2")


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate each pixel into a 2x2 block."""
    _require_4d(x, "upsample_nearest2x")
    N, C, H, W = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        return (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return Tensor(out, (x,), vjp, "upsample2x")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(
            f"concat_channels needs equal batch and spatial dims, got {a.shape} and {b.shape}"
        )
    Ca = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.dtype)], axis=1)
    return Tensor(out, (a, b), lambda g: (g[:, :Ca], g[:, Ca:]), "concat")


def broadcast_latent(z: Tensor, batch: int, height: int, width: int) -> Tensor:
    """
    Tile a latent vector of length D to a (batch, D, height, width) map.
    """
    if z.ndim != 1:
        raise ShapeError(f"broadcast_latent expects a vector, got shape {z.shape}")
    D = z.shape[0]
    out = np.broadcast_to(z.data[None, :, None, None], (batch, D, height, width)).copy()
    return Tensor(out, (z,), lambda g: (g.sum(axis=(0, 2, 3)),), "broadcast_latent")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x), evaluated without overflow."""
    out = np.logaddexp(0, x.data).astype(x.dtype)
    return Tensor(out, (x,), lambda g: (g * expit(x.data),), "softplus")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    mask = x.data > floor
    out = np.where(mask, x.data, floor).astype(x.dtype)
    return Tensor(out, (x,), lambda g: (g * mask,), "clamp_min")


def tril(x: Tensor, k: int = 0) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"tril expects a matrix, got shape {x.shape}")
    mask = np.tril(np.ones(x.shape, dtype=x.dtype), k)
    return Tensor(x.data * mask, (x,), lambda g: (g * mask,), "tril")


def diagonal(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"diagonal expects a square matrix, got shape {x.shape}")
    return Tensor(np.diagonal(x.data).copy(), (x,), lambda g: (np.diag(g),), "diagonal")


def diag_embed(v: Tensor) -> Tensor:
    if v.ndim != 1:
        raise ShapeError(f"diag_embed expects a vector, got shape {v.shape}")
    return Tensor(np.diag(v.data), (v,), lambda g: (np.diagonal(g).copy(),), "diag_embed")
