from ratervar.autodiff.tensor import Tensor, Graph, Gradients, backward, no_grad
from ratervar.autodiff.ops import (
    conv2d,
    relu,
    softmax_channels,
    maxpool2x2,
    upsample_nearest2x,
    concat_channels,
    broadcast_latent,
)
