"""
Permute-MLP and the Permutator block.

A token grid ``[H, W, C]`` (optionally with a leading batch axis) is mixed along
height, width and channels by three parallel square linear maps. For the two
spatial branches the channel axis is split into ``S`` segments of width
``N = C / S``; with ``N == H == W`` a reshape/permute chain swaps the spatial axis
into the channel position so a single ``C x C`` projection mixes every row (or
column) of a segment.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from vision_permutator.autograd.tensor import Tensor, mean, mul, permute, reshape, select
from vision_permutator.models.errors import ShapeError
from vision_permutator.nn.layers import (
    LayerNormLayer,
    LinearLayer,
    Mode,
    ParamStore,
    as_batched,
    gelu,
    linear_forward,
    softmax,
    stochastic_depth,
    unbatch,
)

SPLIT_ATTENTION_REDUCTION = 4
MLP_RATIO = 3

# Branch order of the split-attention logits.
BRANCHES = ("height", "width", "channel")


class FusionVariant(str, Enum):
    """How a Permute-MLP builds and fuses its branches."""

    WEIGHTED = "weighted"
    VANILLA = "vanilla"
    NO_HEIGHT = "no_height"
    NO_WIDTH = "no_width"
    NO_SPATIAL = "no_spatial"

    @property
    def uses_attention(self) -> bool:
        return self != FusionVariant.VANILLA


@dataclass
class PermuteMLPWeights:
    """The four ``C x C`` projections of one Permute-MLP."""

    proj_h: LinearLayer
    proj_w: LinearLayer
    proj_c: LinearLayer
    proj: LinearLayer

    @classmethod
    def register(cls, store: ParamStore, prefix: str, channels: int) -> "PermuteMLPWeights":
        names = ("proj_h", "proj_w", "proj_c", "proj")
        return cls(**{name: LinearLayer(store, f"{prefix}.{name}", channels, channels) for name in names})

    @staticmethod
    def param_count(channels: int) -> int:
        return 4 * LinearLayer.param_count(channels, channels)


@dataclass
class SplitAttentionWeights:
    """Bottleneck producing per-branch, per-channel fusion logits."""

    reduce: LinearLayer
    expand: LinearLayer
    ratio: int

    @classmethod
    def register(
        cls, store: ParamStore, prefix: str, channels: int, ratio: int = SPLIT_ATTENTION_REDUCTION
    ) -> "SplitAttentionWeights":
        if channels % ratio:
            raise ShapeError(f"split attention: channels not divisible by reduction ratio {ratio}", (channels,))
        hidden = channels // ratio
        return cls(
            reduce=LinearLayer(store, f"{prefix}.reduce", channels, hidden),
            expand=LinearLayer(store, f"{prefix}.expand", hidden, len(BRANCHES) * channels),
            ratio=ratio,
        )

    @staticmethod
    def param_count(channels: int, ratio: int = SPLIT_ATTENTION_REDUCTION) -> int:
        hidden = channels // ratio
        return LinearLayer.param_count(channels, hidden) + LinearLayer.param_count(hidden, len(BRANCHES) * channels)


def segment_width(grid_shape: tuple[int, ...], segments: int, axis: str) -> int:
    """
    Validate the segment split for one spatial branch and return ``N = C / S``.

    Raises:
        ShapeError: If C is not divisible by S or N differs from the mixed extent.
    """
    height, width, channels = grid_shape[-3:]
    if segments < 1 or channels % segments:
        raise ShapeError(f"channels not divisible by {segments} segments", grid_shape)
    n = channels // segments
    extent = height if axis == "height" else width
    if n != extent:
        raise ShapeError(f"segment width {n} must equal the {axis} extent {extent}", grid_shape)
    return n


def mix_height(x: Tensor, proj_h: LinearLayer, segments: int) -> Tensor:
    """Mix information along the height axis of each segment."""
    n = segment_width(x.shape, segments, "height")
    grid, squeeze = as_batched(x)
    b, h, w, c = grid.shape
    t = reshape(grid, (b, h, w, n, segments))
    t = permute(t, (0, 3, 2, 1, 4))
    t = reshape(t, (b, n, w, h * segments))
    t = linear_forward(proj_h, t)
    t = reshape(t, (b, n, w, h, segments))
    t = permute(t, (0, 3, 2, 1, 4))
    return unbatch(reshape(t, (b, h, w, c)), squeeze)


def mix_width(x: Tensor, proj_w: LinearLayer, segments: int) -> Tensor:
    """Mix information along the width axis of each segment."""
    n = segment_width(x.shape, segments, "width")
    grid, squeeze = as_batched(x)
    b, h, w, c = grid.shape
    t = reshape(grid, (b, h, w, n, segments))
    t = permute(t, (0, 1, 3, 2, 4))
    t = reshape(t, (b, h, n, w * segments))
    t = linear_forward(proj_w, t)
    t = reshape(t, (b, h, n, w, segments))
    t = permute(t, (0, 1, 3, 2, 4))
    return unbatch(reshape(t, (b, h, w, c)), squeeze)


def permute_branches(
    x: Tensor, w: PermuteMLPWeights, segments: int, variant: FusionVariant = FusionVariant.WEIGHTED
) -> tuple[Tensor, Tensor, Tensor]:
    """
    Branch outputs ``(X_H, X_W, X_C)``. Ablated variants replace a spatial branch by
    a position-wise channel map using that branch's own weights.
    """
    drop_height = variant in (FusionVariant.NO_HEIGHT, FusionVariant.NO_SPATIAL)
    drop_width = variant in (FusionVariant.NO_WIDTH, FusionVariant.NO_SPATIAL)
    x_h = linear_forward(w.proj_h, x) if drop_height else mix_height(x, w.proj_h, segments)
    x_w = linear_forward(w.proj_w, x) if drop_width else mix_width(x, w.proj_w, segments)
    x_c = linear_forward(w.proj_c, x)
    return x_h, x_w, x_c


def permute_mlp_forward(x: Tensor, w: PermuteMLPWeights, segments: int) -> Tensor:
    """Unweighted fusion: ``proj(X_H + X_W + X_C)``."""
    x_h, x_w, x_c = permute_branches(x, w, segments, FusionVariant.VANILLA)
    return linear_forward(w.proj, x_h + x_w + x_c)


def split_attention(x_h: Tensor, x_w: Tensor, x_c: Tensor, a: SplitAttentionWeights) -> Tensor:
    """
    Per-channel branch weights of shape ``[B, 3, C]`` (``[3, C]`` for an unbatched grid).

    The squeeze is the spatial mean of the branch sum; logits come from a GELU
    bottleneck and are normalized with a softmax over the branch axis.
    """
    total, squeeze = as_batched(x_h + x_w + x_c)
    b, _, _, c = total.shape
    pooled = mean(total, (1, 2))
    logits = linear_forward(a.expand, gelu(linear_forward(a.reduce, pooled)))
    weights = softmax(reshape(logits, (b, len(BRANCHES), c)), axis=1)
    return reshape(weights, (len(BRANCHES), c)) if squeeze else weights


def weighted_fuse(x_h: Tensor, x_w: Tensor, x_c: Tensor, weights: Tensor) -> Tensor:
    """``a0 * X_H + a1 * X_W + a2 * X_C`` with per-channel broadcasting."""
    branches = [as_batched(t)[0] for t in (x_h, x_w, x_c)]
    b, c = branches[0].shape[0], branches[0].shape[3]
    per_sample = weights if weights.ndim == 3 else reshape(weights, (1,) + weights.shape)
    fused: Optional[Tensor] = None
    for k, branch in enumerate(branches):
        term = mul(branch, reshape(select(per_sample, 1, k), (b, 1, 1, c)))
        fused = term if fused is None else fused + term
    return unbatch(fused, x_h.ndim == 3)


def weighted_permute_mlp_forward(
    x: Tensor,
    w: PermuteMLPWeights,
    a: SplitAttentionWeights,
    segments: int,
    variant: FusionVariant = FusionVariant.WEIGHTED,
) -> Tensor:
    """Split-attention fusion: ``proj(sum_k a_k * X_k)``."""
    x_h, x_w, x_c = permute_branches(x, w, segments, variant)
    weights = split_attention(x_h, x_w, x_c, a)
    return linear_forward(w.proj, weighted_fuse(x_h, x_w, x_c, weights))


def channel_mlp_forward(x: Tensor, fc1: LinearLayer, fc2: LinearLayer) -> Tensor:
    """Per-token two-layer MLP with GELU in between."""
    if fc1.out_features != fc2.in_features or fc2.out_features != fc1.in_features:
        raise ShapeError("channel MLP: fc1/fc2 extents do not chain", fc1.weight.shape, fc2.weight.shape)
    return linear_forward(fc2, gelu(linear_forward(fc1, x)))


class PermutatorBlock:
    """Pre-norm residual unit: Permute-MLP followed by Channel-MLP."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        channels: int,
        tokens_side: int,
        mlp_ratio: int = MLP_RATIO,
        variant: FusionVariant = FusionVariant.WEIGHTED,
        reduction: int = SPLIT_ATTENTION_REDUCTION,
    ):
        if channels % tokens_side:
            raise ShapeError(f"channels must be divisible by the token side {tokens_side}", (channels,))
        self.prefix = prefix
        self.channels = channels
        self.segments = channels // tokens_side
        self.variant = FusionVariant(variant)
        self.norm1 = LayerNormLayer(store, f"{prefix}.norm1", channels)
        self.permute_mlp = PermuteMLPWeights.register(store, f"{prefix}.permute", channels)
        self.reweight = (
            SplitAttentionWeights.register(store, f"{prefix}.reweight", channels, reduction)
            if self.variant.uses_attention
            else None
        )
        self.norm2 = LayerNormLayer(store, f"{prefix}.norm2", channels)
        hidden = mlp_ratio * channels
        self.fc1 = LinearLayer(store, f"{prefix}.channel.fc1", channels, hidden)
        self.fc2 = LinearLayer(store, f"{prefix}.channel.fc2", hidden, channels)

    @staticmethod
    def param_count(
        channels: int,
        mlp_ratio: int = MLP_RATIO,
        variant: FusionVariant = FusionVariant.WEIGHTED,
        reduction: int = SPLIT_ATTENTION_REDUCTION,
    ) -> int:
        hidden = mlp_ratio * channels
        total = 2 * LayerNormLayer.param_count(channels)
        total += PermuteMLPWeights.param_count(channels)
        if FusionVariant(variant).uses_attention:
            total += SplitAttentionWeights.param_count(channels, reduction)
        total += LinearLayer.param_count(channels, hidden) + LinearLayer.param_count(hidden, channels)
        return total

    def token_mixer(self, x: Tensor) -> Tensor:
        if self.reweight is None:
            return permute_mlp_forward(x, self.permute_mlp, self.segments)
        return weighted_permute_mlp_forward(x, self.permute_mlp, self.reweight, self.segments, self.variant)

    def __call__(self, x: Tensor, drop_rate: float = 0.0, mode: Mode = Mode.EVAL, rng=None) -> Tensor:
        return permutator_block(x, self, drop_rate, mode, rng)


def permutator_block(
    x: Tensor,
    block: PermutatorBlock,
    drop_rate: float,
    mode: Mode,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    ``Y = X + SD(PermuteMLP(LN(X)))`` then ``Z = Y + SD(ChannelMLP(LN(Y)))``.
    """
    y = x + stochastic_depth(block.token_mixer(block.norm1(x)), drop_rate, mode, rng)
    return y + stochastic_depth(channel_mlp_forward(block.norm2(y), block.fc1, block.fc2), drop_rate, mode, rng)
