"""
Neural-network primitives: parameter registry, linear and normalization layers,
activations, stochastic depth, patch embedding and the pooled classifier head.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

import numpy as np
from scipy.stats import truncnorm

from vision_permutator.autograd.tensor import (
    DEFAULT_DTYPE,
    Tensor,
    amax_const,
    erf,
    exp,
    log,
    matmul,
    mean,
    mul,
    permute,
    reciprocal,
    reshape,
    sqrt,
)
from vision_permutator.autograd.tensor import sum as reduce_sum
from vision_permutator.models.errors import ShapeError

LAYER_NORM_EPS = 1e-6
INIT_STD = 0.02
INIT_TRUNCATION = 2.0


class Mode(str, Enum):
    """Forward-pass mode."""

    TRAIN = "train"
    EVAL = "eval"


class ParamKind(str, Enum):
    """Role of a registered tensor; decides initialization and weight decay."""

    WEIGHT = "weight"
    BIAS = "bias"
    NORM_WEIGHT = "norm_weight"
    NORM_BIAS = "norm_bias"


@dataclass
class ParamEntry:
    tensor: Tensor
    kind: ParamKind
    decay: bool


class ParamStore:
    """Insertion-ordered registry of trainable tensors."""

    def __init__(self, dtype=DEFAULT_DTYPE):
        self.dtype = np.dtype(dtype)
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, shape: tuple[int, ...], kind: ParamKind) -> Tensor:
        """Register a zero-filled tensor under ``name``."""
        if name in self._entries:
            raise ValueError(f"parameter '{name}' is already registered")
        tensor = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)
        self._entries[name] = ParamEntry(tensor, kind, decay=kind == ParamKind.WEIGHT)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name, entry in self._entries.items():
            yield name, entry.tensor

    def kind(self, name: str) -> ParamKind:
        return self._entries[name].kind

    def decays(self, name: str) -> bool:
        return self._entries[name].decay

    def total_params(self) -> int:
        return sum(entry.tensor.size for entry in self._entries.values())

    def zero_grad(self) -> None:
        for entry in self._entries.values():
            entry.tensor.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of every tensor, keyed by name in registration order."""
        return {name: entry.tensor.data.copy() for name, entry in self._entries.items()}

    def assign(self, name: str, array: np.ndarray) -> None:
        """Overwrite a tensor's values in place, keeping its shape and dtype."""
        target = self._entries[name].tensor
        if tuple(array.shape) != target.shape:
            raise ShapeError(f"assign: shape mismatch for '{name}'", target.shape, array.shape)
        target.data[...] = array

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store in another precision; names, kinds and flags are kept."""
        clone = ParamStore(dtype)
        for name, entry in self._entries.items():
            tensor = Tensor(entry.tensor.data.astype(dtype), requires_grad=True)
            clone._entries[name] = ParamEntry(tensor, entry.kind, entry.decay)
        return clone


class LinearLayer:
    """Affine map ``y = x W + b`` over the last axis, with weight ``[in, out]``."""

    def __init__(self, store: ParamStore, name: str, in_features: int, out_features: int):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        self._store = store
        store.add(f"{name}.weight", (in_features, out_features), ParamKind.WEIGHT)
        store.add(f"{name}.bias", (out_features,), ParamKind.BIAS)

    @property
    def weight(self) -> Tensor:
        return self._store[f"{self.name}.weight"]

    @property
    def bias(self) -> Tensor:
        return self._store[f"{self.name}.bias"]

    @staticmethod
    def param_count(in_features: int, out_features: int) -> int:
        return in_features * out_features + out_features

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


class LayerNormLayer:
    """Per-token normalization over the channel axis with affine ``gamma``/``beta``."""

    def __init__(self, store: ParamStore, name: str, channels: int, eps: float = LAYER_NORM_EPS):
        self.name = name
        self.channels = channels
        self.eps = eps
        self._store = store
        store.add(f"{name}.weight", (channels,), ParamKind.NORM_WEIGHT)
        store.add(f"{name}.bias", (channels,), ParamKind.NORM_BIAS)

    @property
    def gamma(self) -> Tensor:
        return self._store[f"{self.name}.weight"]

    @property
    def beta(self) -> Tensor:
        return self._store[f"{self.name}.bias"]

    @staticmethod
    def param_count(channels: int) -> int:
        return 2 * channels

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    """Apply ``layer`` to the last axis of ``x``; leading axes are batched."""
    if x.ndim < 1 or x.shape[-1] != layer.in_features:
        raise ShapeError(
            f"linear '{layer.name}': expected last extent {layer.in_features}",
            x.shape,
            layer.weight.shape,
        )
    return matmul(x, layer.weight) + layer.bias


def normalize(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Pre-affine LayerNorm: zero mean, unit biased variance per token."""
    mu = mean(x, -1, keepdims=True)
    centered = x - mu
    var = mean(mul(centered, centered), -1, keepdims=True)
    return mul(centered, reciprocal(sqrt(var + eps)))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layer_norm: gamma/beta do not match the channel extent", x.shape, gamma.shape, beta.shape)
    return mul(normalize(x, eps), gamma) + beta


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with Phi written through erf."""
    phi = (erf(x * (1.0 / math.sqrt(2.0))) + 1.0) * 0.5
    return mul(x, phi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = exp(x - amax_const(x, axis))
    return mul(shifted, reciprocal(reduce_sum(shifted, axis, keepdims=True)))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - amax_const(x, axis)
    return shifted - log(reduce_sum(exp(shifted), axis, keepdims=True))


def stochastic_depth(
    x_residual: Tensor,
    rate: float,
    mode: Mode,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Drop a residual branch per sample during training.

    Each sample's branch output is zeroed with probability ``rate`` and otherwise
    scaled by ``1 / (1 - rate)``. Axis 0 is the sample axis for rank-4 batches;
    lower ranks are a single sample. Evaluation mode is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"stochastic depth rate must be in [0, 1), got {rate}")
    if Mode(mode) == Mode.EVAL or rate == 0.0:
        return x_residual
    if rng is None:
        raise ValueError("stochastic depth in train mode needs an explicit rng")
    samples = x_residual.shape[0] if x_residual.ndim >= 4 else 1
    keep = (rng.random(samples) >= rate).astype(x_residual.dtype) / x_residual.dtype.type(1.0 - rate)
    mask_shape = (samples,) + (1,) * (x_residual.ndim - 1) if x_residual.ndim >= 4 else (1,) * x_residual.ndim
    return mul(x_residual, Tensor(keep.reshape(mask_shape), dtype=x_residual.dtype))


def _unfold_patches(x: Tensor, patch: int) -> Tensor:
    """[B, H, W, C] -> [B, H/p, W/p, p*p*C], each patch flattened row-major (row, col, channel)."""
    b, h, w, c = x.shape
    x = reshape(x, (b, h // patch, patch, w // patch, patch, c))
    x = permute(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b, h // patch, w // patch, patch * patch * c))


def as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError("expected [H, W, C] or [B, H, W, C]", x.shape)
    return x, False


def unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return reshape(x, x.shape[1:]) if squeeze else x


def patch_embed(img: Tensor, patch: int, layer: LinearLayer) -> Tensor:
    """
    Split an image into non-overlapping ``patch x patch`` tiles and project each
    with one shared linear layer. No positional encoding is added.
    """
    x, squeeze = as_batched(img)
    height, width = x.shape[1], x.shape[2]
    if height % patch or width % patch:
        raise ShapeError(f"patch_embed: image extents not divisible by patch {patch}", img.shape)
    if layer.in_features != patch * patch * x.shape[3]:
        raise ShapeError(f"patch_embed: layer expects {layer.in_features} inputs per patch", img.shape)
    return unbatch(linear_forward(layer, _unfold_patches(x, patch)), squeeze)


def downsample_embed(grid: Tensor, layer: LinearLayer, patch: int = 2) -> Tensor:
    """Merge each ``2 x 2`` block of tokens into one token of the next stage's width."""
    x, squeeze = as_batched(grid)
    if x.shape[1] % patch or x.shape[2] % patch:
        raise ShapeError(f"downsample_embed: token grid extents must be divisible by {patch}", grid.shape)
    return unbatch(linear_forward(layer, _unfold_patches(x, patch)), squeeze)


def global_pool_head(grid: Tensor, classifier: LinearLayer, norm: Optional[LayerNormLayer] = None) -> Tensor:
    """Optional final LayerNorm, mean over the two token axes, then the classifier."""
    if norm is not None:
        grid = norm(grid)
    pooled = mean(grid, (-3, -2))
    return linear_forward(classifier, pooled)


def truncated_normal(shape: tuple[int, ...], rng: np.random.Generator, std: float = INIT_STD) -> np.ndarray:
    """
    Normal samples truncated at ``INIT_TRUNCATION`` standard deviations and rescaled
    so the truncated distribution has standard deviation ``std``.
    """
    a, b = -INIT_TRUNCATION, INIT_TRUNCATION
    unit = truncnorm.rvs(a, b, size=shape, random_state=rng)
    return unit * (std / truncnorm.std(a, b))


def init_params(store: ParamStore, rng: np.random.Generator) -> None:
    """Initialize every tensor by kind, in registration order."""
    for name in store.names():
        kind = store.kind(name)
        tensor = store[name]
        if kind == ParamKind.WEIGHT:
            tensor.data[...] = truncated_normal(tensor.shape, rng)
        elif kind == ParamKind.NORM_WEIGHT:
            tensor.data[...] = 1.0
        else:
            tensor.data[...] = 0.0
