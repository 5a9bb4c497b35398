"""Channel/spatial attention refinement and classification of the fused map.

The channel gate sums the average- and max-pooled channel vectors *before*
the shared bottleneck MLP (per the fusion pipeline's formulation, which
differs from the original CBAM where the MLP is applied to each pooled
vector separately). The spatial gate is a 7x7 conv over the channel-pooled
pair. Classification is adaptive-average-pool -> linear -> softmax.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass
class CbamParams:
    w1: Tensor  # (C/r, C) bottleneck
    w2: Tensor  # (C, C/r) expansion
    w_spatial: Tensor  # (1, 2, 7, 7)
    w_cls: Tensor  # (N_cl, C)
    b_cls: Tensor  # (N_cl,)
    reduction: int

    def __post_init__(self):
        c = self.w1.shape[1]
        if self.reduction < 1 or c % self.reduction:
            raise ConfigError(f"channel count {c} must be divisible by reduction {self.reduction}")
        if self.w_spatial.shape[:2] != (1, 2):
            raise ConfigError(f"spatial kernel must take 2 input channels, got {self.w_spatial.shape}")


SPATIAL_KERNEL = 7


def init_params(rng, channels: int, n_classes: int, reduction: int = 8) -> CbamParams:
    if reduction < 1 or channels % reduction:
        raise ConfigError(f"channel count {channels} must be divisible by reduction {reduction}")
    hidden = channels // reduction
    # The classifier starts at zero so the model begins at exactly uniform
    # predictions (loss ln N_cl); everything hidden is He-uniform.
    return CbamParams(
        w1=T.he_uniform(rng, (hidden, channels), fan_in=channels),
        w2=T.he_uniform(rng, (channels, hidden), fan_in=hidden),
        w_spatial=T.he_uniform(rng, (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL), fan_in=2 * SPATIAL_KERNEL**2),
        w_cls=Tensor(np.zeros((n_classes, channels), dtype=np.float32), requires_grad=True),
        b_cls=Tensor(np.zeros(n_classes, dtype=np.float32), requires_grad=True),
        reduction=reduction,
    )


def parameters(params: CbamParams) -> dict:
    return {
        "cbam.w1": params.w1,
        "cbam.w2": params.w2,
        "cbam.w_spatial": params.w_spatial,
        "cls.w": params.w_cls,
        "cls.b": params.b_cls,
    }


def channel_attention(fmap: Tensor, params: CbamParams) -> Tensor:
    """Per-channel sigmoid gate from summed avg+max pooled statistics."""
    c = fmap.shape[-3]
    if c != params.w1.shape[1]:
        raise DimensionError(f"map has {c} channels, params expect {params.w1.shape[1]}")
    lead = fmap.shape[:-3]
    vec = T.reshape(avg_max_sum(fmap), lead + (c,) if lead else (1, c))
    hidden = T.relu(T.matmul(vec, T.transpose(params.w1)))
    gate = T.sigmoid(T.matmul(hidden, T.transpose(params.w2)))
    return T.reshape(gate, lead + (c, 1, 1))


def avg_max_sum(fmap: Tensor) -> Tensor:
    return T.avg_pool_spatial(fmap) + T.max_pool_spatial(fmap)


def spatial_attention(fmap: Tensor, params: CbamParams) -> Tensor:
    """Per-position sigmoid gate from the channel-pooled avg/max pair."""
    stacked = T.concat([T.channel_pool(fmap, "avg"), T.channel_pool(fmap, "max")], axis=-3)
    conv = T.conv2d(stacked, params.w_spatial, stride=1, padding=SPATIAL_KERNEL // 2)
    return T.sigmoid(conv)


def refine(fmap: Tensor, params: CbamParams) -> Tensor:
    """Gate channels, then positions; both gates lie in (0, 1) so the result
    never exceeds the input in magnitude."""
    channel_refined = fmap * channel_attention(fmap, params)
    return channel_refined * spatial_attention(channel_refined, params)


def pool_features(fmap: Tensor) -> Tensor:
    """Adaptive-average-pool to 1x1 and flatten to (..., C)."""
    pooled = T.adaptive_avg_pool(fmap, (1, 1))
    lead = fmap.shape[:-3]
    return T.reshape(pooled, lead + (fmap.shape[-3],))


def head_probs(vec: Tensor, params: CbamParams, dropout_rate: float = 0.0, rng=None) -> Tensor:
    """Softmax head on pooled feature vectors (..., C).

    The optional dropout sits between pooling and the linear layer and is
    what MC-dropout inference re-samples.
    """
    if dropout_rate > 0.0:
        vec = T.dropout(vec, dropout_rate, rng)
    flat = vec if vec.ndim >= 2 else T.reshape(vec, (1,) + vec.shape)
    logits = T.matmul(flat, T.transpose(params.w_cls)) + params.b_cls
    probs = T.softmax(logits, axis=-1)
    return probs if vec.ndim >= 2 else T.reshape(probs, (params.w_cls.shape[0],))


def classify(fmap: Tensor, params: CbamParams, dropout_rate: float = 0.0, rng=None) -> Tensor:
    """Class probabilities for a refined map; rows sum to 1."""
    return head_probs(pool_features(fmap), params, dropout_rate=dropout_rate, rng=rng)
