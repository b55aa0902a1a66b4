"""
Architecture registry, model assembly and parameter accounting.

A model is a patch embedding, one or two stages of Permutator blocks joined by a
2x2 token-merging embedding, an optional final LayerNorm and a pooled linear
classifier. Parameter names are hierarchical: ``stages.{i}.embed``,
``stages.{i}.blocks.{j}.*``, ``head.norm`` and ``head.classifier``.
"""
from typing import Optional, Union

import numpy as np

from vision_permutator.autograd.gradcheck import GradcheckReport, gradcheck_params
from vision_permutator.autograd.tensor import DEFAULT_DTYPE, Tensor
from vision_permutator.models.config import StageConfig, ViPConfig
from vision_permutator.models.errors import ConfigError, ShapeError
from vision_permutator.nn.layers import (
    LayerNormLayer,
    LinearLayer,
    Mode,
    ParamStore,
    downsample_embed,
    global_pool_head,
    init_params,
    patch_embed,
)
from vision_permutator.permutator import PermutatorBlock
from vision_permutator.services.augmentation_service import one_hot, soft_cross_entropy
from vision_permutator.utils.logger import setup_logger

logger = setup_logger(__name__)

TINY_MODEL = "ViP-Tiny"

# Reference parameter counts, in millions.
REFERENCE_PARAMS_M = {
    "ViP-Small/16": 23.0,
    "ViP-Small/14": 30.0,
    "ViP-Small/7": 25.0,
    "ViP-Medium/7": 55.0,
    "ViP-Large/7": 88.0,
}


def _two_stage(name: str, c1: int, d1: int, c2: int, d2: int, sd: float) -> ViPConfig:
    return ViPConfig(
        name=name,
        stages=[
            StageConfig(patch_size=7, hidden_size=c1, num_tokens_side=32, depth=d1),
            StageConfig(patch_size=2, hidden_size=c2, num_tokens_side=16, depth=d2),
        ],
        stochastic_depth_max=sd,
    )


def registry(num_classes_tiny: int = 8) -> dict[str, ViPConfig]:
    """All known architectures, keyed by name."""
    return {
        "ViP-Small/16": ViPConfig(
            name="ViP-Small/16",
            stages=[StageConfig(patch_size=16, hidden_size=336, num_tokens_side=14, depth=18)],
            stochastic_depth_max=0.1,
        ),
        "ViP-Small/14": ViPConfig(
            name="ViP-Small/14",
            stages=[StageConfig(patch_size=14, hidden_size=384, num_tokens_side=16, depth=18)],
            stochastic_depth_max=0.1,
        ),
        "ViP-Small/7": _two_stage("ViP-Small/7", 192, 4, 384, 14, 0.1),
        "ViP-Medium/7": _two_stage("ViP-Medium/7", 256, 7, 512, 17, 0.2),
        "ViP-Large/7": _two_stage("ViP-Large/7", 256, 9, 512, 27, 0.3),
        TINY_MODEL: ViPConfig(
            name=TINY_MODEL,
            stages=[StageConfig(patch_size=4, hidden_size=64, num_tokens_side=8, depth=4)],
            num_classes=num_classes_tiny,
            stochastic_depth_max=0.0,
            image_size=32,
        ),
    }


def get_config(name: str, num_classes_tiny: int = 8) -> ViPConfig:
    """
    Look up a registry entry.

    Raises:
        ConfigError: If the name is not registered.
    """
    configs = registry(num_classes_tiny)
    if name not in configs:
        raise ConfigError(f"unknown model '{name}'; choose one of {', '.join(configs)}", field="model")
    return configs[name]


def stochastic_depth_rates(config: ViPConfig) -> list[float]:
    """Per-block drop rates in forward order across all stages."""
    depth = config.total_depth
    if config.stochastic_depth_schedule == "constant":
        return [config.stochastic_depth_max] * depth
    return [float(r) for r in np.linspace(0.0, config.stochastic_depth_max, depth)]


def _embed_inputs(config: ViPConfig, index: int) -> int:
    stage = config.stages[index]
    channels_in = config.in_channels if index == 0 else config.stages[index - 1].hidden_size
    return stage.patch_size * stage.patch_size * channels_in


class VisionPermutator:
    """A built model: its ParamStore plus the layer objects the forward pass walks."""

    def __init__(self, config: ViPConfig, store: ParamStore):
        self.config = config
        self.store = store
        self.embeds: list[LinearLayer] = []
        self.blocks: list[list[PermutatorBlock]] = []
        for index, stage in enumerate(config.stages):
            prefix = f"stages.{index}"
            self.embeds.append(
                LinearLayer(store, f"{prefix}.embed", _embed_inputs(config, index), stage.hidden_size)
            )
            self.blocks.append(
                [
                    PermutatorBlock(
                        store,
                        f"{prefix}.blocks.{j}",
                        stage.hidden_size,
                        stage.num_tokens_side,
                        config.mlp_ratio,
                        config.variant,
                        config.sa_reduction,
                    )
                    for j in range(stage.depth)
                ]
            )
        last = config.stages[-1].hidden_size
        self.head_norm = LayerNormLayer(store, "head.norm", last) if config.final_layernorm else None
        self.classifier = LinearLayer(store, "head.classifier", last, config.num_classes)
        self.drop_rates = stochastic_depth_rates(config)

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.config.image_size, self.config.image_size, self.config.in_channels)

    def param_count(self) -> int:
        return self.store.total_params()

    def forward(
        self,
        batch: Union[Tensor, np.ndarray],
        mode: Mode = Mode.EVAL,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """
        Logits ``[B, K]`` for a batch of ``[B, H, W, C]`` images.

        Raises:
            ShapeError: If the batch does not have the configured resolution.
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch), dtype=self.store.dtype)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name} expects [B, {', '.join(map(str, self.input_shape))}] input", x.shape)
        rates = iter(self.drop_rates)
        for index, (stage, embed) in enumerate(zip(self.config.stages, self.embeds)):
            if index == 0:
                x = patch_embed(x, stage.patch_size, embed)
            else:
                x = downsample_embed(x, embed, stage.patch_size)
            for block in self.blocks[index]:
                x = block(x, next(rates), mode, rng)
        return global_pool_head(x, self.classifier, self.head_norm)

    __call__ = forward


def build(config: ViPConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> VisionPermutator:
    """Register and initialize every parameter of ``config`` in one store."""
    store = ParamStore(dtype)
    model = VisionPermutator(config, store)
    init_params(store, rng)
    logger.debug("built %s with %d parameters (%s)", config.name, store.total_params(), store.dtype)
    return model


def forward(
    model: VisionPermutator,
    batch: Union[Tensor, np.ndarray],
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    return model.forward(batch, mode, rng)


def param_breakdown(config: ViPConfig) -> dict[str, int]:
    """Closed-form parameter counts per stage (embedding included) and for the head."""
    breakdown = {}
    for index, stage in enumerate(config.stages):
        block = PermutatorBlock.param_count(stage.hidden_size, config.mlp_ratio, config.variant, config.sa_reduction)
        embed = LinearLayer.param_count(_embed_inputs(config, index), stage.hidden_size)
        breakdown[f"stage {index}"] = embed + stage.depth * block
    last = config.stages[-1].hidden_size
    head = LinearLayer.param_count(last, config.num_classes)
    if config.final_layernorm:
        head += LayerNormLayer.param_count(last)
    breakdown["head"] = head
    return breakdown


def count_params(config: ViPConfig) -> int:
    return sum(param_breakdown(config).values())


def model_gradcheck(
    config: ViPConfig,
    tol: float = 1e-3,
    eps: float = 1e-5,
    max_elements: int = 4,
    batch: int = 2,
    seed: int = 0,
) -> GradcheckReport:
    """
    Finite-difference check of every parameter of a 64-bit build, through a
    cross-entropy loss on random images and labels in evaluation mode.
    """
    rng = np.random.default_rng(seed)
    model = build(config, rng, dtype=np.float64)
    images = Tensor(rng.standard_normal((batch,) + model.input_shape), dtype=np.float64)
    targets = one_hot(rng.integers(config.num_classes, size=batch), config.num_classes, np.float64)

    def loss_fn() -> Tensor:
        return soft_cross_entropy(model.forward(images, Mode.EVAL), targets)

    return gradcheck_params(loss_fn, model.store.items(), eps=eps, tol=tol, max_elements=max_elements, rng=rng)
