"""
Neural-network primitives the Vision Permutator is assembled from.
"""
from vision_permutator.nn.layers import (
    LAYER_NORM_EPS,
    LayerNormLayer,
    LinearLayer,
    Mode,
    as_batched,
    unbatch,
    ParamKind,
    ParamStore,
    downsample_embed,
    gelu,
    global_pool_head,
    init_params,
    layer_norm,
    linear_forward,
    log_softmax,
    normalize,
    patch_embed,
    softmax,
    stochastic_depth,
    truncated_normal,
)

__all__ = [
    "LAYER_NORM_EPS",
    "LayerNormLayer",
    "LinearLayer",
    "Mode",
    "as_batched",
    "unbatch",
    "ParamKind",
    "ParamStore",
    "downsample_embed",
    "gelu",
    "global_pool_head",
    "init_params",
    "layer_norm",
    "linear_forward",
    "log_softmax",
    "normalize",
    "patch_embed",
    "softmax",
    "stochastic_depth",
    "truncated_normal",
]
