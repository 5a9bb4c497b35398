"""Bidirectional cross-attention fusion between the two networks' feature maps.

Spatial positions are the attention tokens (N = H*W) and channels the
embedding dimension. In cross mode the queries for the output attached to one
network are projected from the *other* network's tokens, while keys and
values come from the network's own tokens; the two directional outputs are
summed. Per-scale fusions are merged by 2x average-pool of the fine scale and
channel concatenation with the coarse scale.

Single-head, no positional encoding, d_k = the common projected width.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import FeatureMapSet
from .errors import DimensionError
from .tensor import Tensor

SCALES = (1, 2)
NETWORKS = ("a", "b")


@dataclass
class TokenizedMap:
    """Feature map flattened to (..., H*W, C) with its original shape kept."""

    tokens: Tensor
    origin_shape: tuple


@dataclass
class DirectionParams:
    w_q: Tensor  # (C, C)
    w_k: Tensor
    w_v: Tensor


@dataclass
class CrossAttentionParams:
    common_width: int
    proj: dict  # (scale, network) -> (C, C_in) projection
    attn: dict  # (scale, attended network) -> DirectionParams

    @property
    def d_k(self) -> int:
        return self.common_width


def init_params(rng, common_width: int, channels_a: tuple, channels_b: tuple) -> CrossAttentionParams:
    """He-uniform fusion parameters for per-scale channel counts (scale1, scale2)."""
    c = common_width
    proj, attn = {}, {}
    for scale, c_a, c_b in zip(SCALES, channels_a, channels_b):
        proj[(scale, "a")] = T.he_uniform(rng, (c, c_a), fan_in=c_a)
        proj[(scale, "b")] = T.he_uniform(rng, (c, c_b), fan_in=c_b)
        for net in NETWORKS:
            attn[(scale, net)] = DirectionParams(
                w_q=T.he_uniform(rng, (c, c), fan_in=c),
                w_k=T.he_uniform(rng, (c, c), fan_in=c),
                w_v=T.he_uniform(rng, (c, c), fan_in=c),
            )
    return CrossAttentionParams(common_width=c, proj=proj, attn=attn)


def parameters(params: CrossAttentionParams) -> dict:
    out = {}
    for (scale, net), w in params.proj.items():
        out[f"fusion.s{scale}.proj_{net}"] = w
    for (scale, net), dp in params.attn.items():
        for name in ("w_q", "w_k", "w_v"):
            out[f"fusion.s{scale}.{net}.{name}"] = getattr(dp, name)
    return out


def tokenize(fmap: Tensor) -> TokenizedMap:
    """(..., C, H, W) -> tokens (..., H*W, C); exact inverse of detokenize."""
    c, h, w = fmap.shape[-3:]
    flat = T.reshape(fmap, fmap.shape[:-3] + (c, h * w))
    return TokenizedMap(tokens=T.swap_last2(flat), origin_shape=(c, h, w))


def detokenize(tokens: Tensor, origin_shape: tuple) -> Tensor:
    c, h, w = origin_shape
    if tokens.shape[-2:] != (h * w, c):
        raise DimensionError(f"tokens {tokens.shape} do not match origin shape {origin_shape}")
    return T.reshape(T.swap_last2(tokens), tokens.shape[:-2] + (c, h, w))


def project_tokens(tokens: Tensor, weight: Tensor) -> Tensor:
    """Apply a (C_out, C_in) per-token linear map, the 1x1-conv equivalent."""
    return T.matmul(tokens, T.transpose(weight))


def project_common(fs: FeatureMapSet, params: CrossAttentionParams) -> dict:
    """Project all four maps to the common width; returns {scale: (X_a, X_b)}."""
    pairs = {1: (fs.x_a_1, fs.x_b_1), 2: (fs.x_a_2, fs.x_b_2)}
    out = {}
    for scale, (xa, xb) in pairs.items():
        projected = []
        for net, fmap in zip(NETWORKS, (xa, xb)):
            tm = tokenize(fmap)
            proj = project_tokens(tm.tokens, params.proj[(scale, net)])
            projected.append(detokenize(proj, (params.common_width,) + tm.origin_shape[1:]))
        out[scale] = tuple(projected)
    return out


def attention_logits(q: Tensor, k: Tensor) -> Tensor:
    """Scaled similarity Q K^T / sqrt(d_k) between token sets (..., N, C)."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query/key widths differ: {q.shape} vs {k.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    return T.matmul(q, T.swap_last2(k)) * scale


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Attention rows over the key axis; each row is a probability vector."""
    return T.softmax(attention_logits(q, k), axis=-1)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if q.shape[-2:] != k.shape[-2:] or k.shape[-2:] != v.shape[-2:]:
        raise DimensionError(f"Q/K/V token shapes differ: {q.shape}, {k.shape}, {v.shape}")
    return T.matmul(attention_weights(q, k), v)


def cross_attend_direction(query_source: Tensor, attended: Tensor, dp: DirectionParams) -> Tensor:
    """One attention direction over maps already projected to the common width.

    Queries come from ``query_source``'s tokens, keys and values from
    ``attended``'s own tokens; the result is reshaped back to a map.
    """
    if query_source.shape[-2:] != attended.shape[-2:]:
        raise DimensionError(
            f"maps at different scales: {query_source.shape} vs {attended.shape}"
        )
    tm_own = tokenize(attended)
    tm_src = tokenize(query_source)
    q = project_tokens(tm_src.tokens, dp.w_q)
    k = project_tokens(tm_own.tokens, dp.w_k)
    v = project_tokens(tm_own.tokens, dp.w_v)
    return detokenize(scaled_dot_product_attention(q, k, v), tm_own.origin_shape)


def bidirectional_fuse(x_a: Tensor, x_b: Tensor, params: CrossAttentionParams,
                       scale: int, mode: str = "cross") -> Tensor:
    """Sum of both directional attention outputs at one scale.

    ``mode`` "cross" exchanges queries between networks; "self" derives each
    direction's queries from its own network (the no-exchange ablation).
    """
    src_for_a, src_for_b = (x_b, x_a) if mode == "cross" else (x_a, x_b)
    out_a = cross_attend_direction(src_for_a, x_a, params.attn[(scale, "a")])
    out_b = cross_attend_direction(src_for_b, x_b, params.attn[(scale, "b")])
    return out_a + out_b


def multiscale_fuse(fs: FeatureMapSet, params: CrossAttentionParams, mode: str = "cross") -> Tensor:
    """Fuse both scales into one (2C, H2, W2) map.

    Scale-1 fusion is average-pooled 2x to the scale-2 grid, then the two
    fused maps are concatenated along channels.
    """
    projected = project_common(fs, params)
    fused1 = bidirectional_fuse(*projected[1], params, scale=1, mode=mode)
    fused2 = bidirectional_fuse(*projected[2], params, scale=2, mode=mode)
    return T.concat([T.avg_pool2x(fused1), fused2], axis=-3)
