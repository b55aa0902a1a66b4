"""
Loop-level reference implementations.

Each function re-derives an operation from explicit index arithmetic on plain
numpy arrays, with no reshape or permute tricks, so the fast tensor paths can be
checked against it.
"""
import itertools
import math
from typing import Sequence

import numpy as np

from vision_permutator.nn.layers import LinearLayer

Affine = tuple[np.ndarray, np.ndarray]


def layer_arrays(layer: LinearLayer) -> Affine:
    return layer.weight.data, layer.bias.data


def row_major_strides(shape: Sequence[int]) -> list[int]:
    strides = [1] * len(shape)
    for axis in range(len(shape) - 2, -1, -1):
        strides[axis] = strides[axis + 1] * shape[axis + 1]
    return strides


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple loop over ``[m, k] x [k, n]`` accumulated in float64."""
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def permute_reshape_oracle(x: np.ndarray, axes: Sequence[int], new_shape: Sequence[int]) -> np.ndarray:
    """
    ``reshape(permute(x, axes), new_shape)`` by moving every element through its
    permuted multi-index and row-major offset.
    """
    permuted_shape = [x.shape[a] for a in axes]
    strides = row_major_strides(permuted_shape)
    flat = np.empty(x.size, dtype=x.dtype)
    for idx in itertools.product(*(range(s) for s in x.shape)):
        permuted_idx = [idx[a] for a in axes]
        offset = sum(i * s for i, s in zip(permuted_idx, strides))
        flat[offset] = x[idx]
    return flat.reshape(tuple(new_shape))


def reshape_oracle(x: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    return permute_reshape_oracle(x, range(x.ndim), new_shape)


def linear_oracle(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Apply ``x W + b`` token by token over the last axis."""
    out = np.empty(x.shape[:-1] + (weight.shape[1],), dtype=np.float64)
    for idx in itertools.product(*(range(s) for s in x.shape[:-1])):
        out[idx] = x[idx].astype(np.float64) @ weight.astype(np.float64) + bias
    return out


def spatial_mean_oracle(grid: np.ndarray) -> np.ndarray:
    """Average of an ``[H, W, C]`` grid over its two token axes."""
    h, w, c = grid.shape
    acc = np.zeros(c, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            acc += grid[i, j]
    return acc / (h * w)


def unfold_oracle(image: np.ndarray, patch: int) -> np.ndarray:
    """``[H, W, C]`` image to ``[H/p, W/p, p*p*C]`` patches, flattened row, column, channel."""
    h, w, c = image.shape
    out = np.empty((h // patch, w // patch, patch * patch * c), dtype=image.dtype)
    for pi in range(h // patch):
        for pj in range(w // patch):
            k = 0
            for r in range(patch):
                for q in range(patch):
                    for ch in range(c):
                        out[pi, pj, k] = image[pi * patch + r, pj * patch + q, ch]
                        k += 1
    return out


def mix_height_oracle(x: np.ndarray, proj_h: Affine, segments: int) -> np.ndarray:
    """
    Gather, for each column ``j`` and segment-channel ``n``, the vector
    ``v[h * S + s] = x[h, j, n * S + s]``, map it, and scatter it back.
    """
    weight, bias = proj_h
    h_ext, w_ext, c = x.shape
    n_ext = c // segments
    out = np.empty(x.shape, dtype=np.float64)
    for j in range(w_ext):
        for n in range(n_ext):
            v = np.array([x[h, j, n * segments + s] for h in range(h_ext) for s in range(segments)], dtype=np.float64)
            mapped = v @ weight.astype(np.float64) + bias
            for h in range(h_ext):
                for s in range(segments):
                    out[h, j, n * segments + s] = mapped[h * segments + s]
    return out


def mix_width_oracle(x: np.ndarray, proj_w: Affine, segments: int) -> np.ndarray:
    """Width counterpart of :func:`mix_height_oracle`."""
    weight, bias = proj_w
    h_ext, w_ext, c = x.shape
    n_ext = c // segments
    out = np.empty(x.shape, dtype=np.float64)
    for i in range(h_ext):
        for n in range(n_ext):
            v = np.array([x[i, w, n * segments + s] for w in range(w_ext) for s in range(segments)], dtype=np.float64)
            mapped = v @ weight.astype(np.float64) + bias
            for w in range(w_ext):
                for s in range(segments):
                    out[i, w, n * segments + s] = mapped[w * segments + s]
    return out


def branches_oracle(x: np.ndarray, weights: dict[str, Affine], segments: int) -> tuple[np.ndarray, ...]:
    return (
        mix_height_oracle(x, weights["proj_h"], segments),
        mix_width_oracle(x, weights["proj_w"], segments),
        linear_oracle(x, *weights["proj_c"]),
    )


def permute_mlp_oracle(x: np.ndarray, weights: dict[str, Affine], segments: int) -> np.ndarray:
    x_h, x_w, x_c = branches_oracle(x, weights, segments)
    return linear_oracle(x_h + x_w + x_c, *weights["proj"])


def _gelu(v: np.ndarray) -> np.ndarray:
    return np.array([t * 0.5 * (1.0 + math.erf(t / math.sqrt(2.0))) for t in v])


def weighted_permute_mlp_oracle(
    x: np.ndarray, weights: dict[str, Affine], attention: dict[str, Affine], segments: int
) -> np.ndarray:
    """Straight-line split-attention fusion on one ``[H, W, C]`` grid."""
    x_h, x_w, x_c = branches_oracle(x, weights, segments)
    c = x.shape[-1]
    squeezed = spatial_mean_oracle(x_h + x_w + x_c)
    w1, b1 = attention["reduce"]
    w2, b2 = attention["expand"]
    logits = _gelu(squeezed @ w1 + b1) @ w2 + b2
    fused = np.zeros_like(x_h)
    for ch in range(c):
        branch_logits = [logits[k * c + ch] for k in range(3)]
        top = max(branch_logits)
        expd = [math.exp(z - top) for z in branch_logits]
        total = sum(expd)
        a = [e / total for e in expd]
        fused[..., ch] = a[0] * x_h[..., ch] + a[1] * x_w[..., ch] + a[2] * x_c[..., ch]
    return linear_oracle(fused, *weights["proj"])
