"""
Configuration models for the vision_permutator package.
"""
import json
import math
from pathlib import Path
from typing import Literal, Optional, Type, TypeVar, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from vision_permutator.models.errors import ConfigError
from vision_permutator.permutator import MLP_RATIO, SPLIT_ATTENTION_REDUCTION, FusionVariant

ModelT = TypeVar("ModelT", bound=BaseModel)
PathLike = Union[str, Path]


def parse_json_model(model_cls: Type[ModelT], text: str) -> ModelT:
    """
    Validate a JSON document against ``model_cls``.

    Raises:
        ConfigError: With line/column for malformed JSON, or with the dotted path
            of the first failing field for schema violations.
    """
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno, column=e.colno) from e
    try:
        return model_cls.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(first["msg"], field=field) from e


def load_json_model(model_cls: Type[ModelT], path: PathLike) -> ModelT:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    return parse_json_model(model_cls, text)


class StageConfig(BaseModel):
    """One stage of Permutator blocks sharing a token grid."""

    patch_size: int = Field(ge=1, description="Initial patch size, or the 2x2 downsample of later stages")
    hidden_size: int = Field(ge=1, description="Channel width C")
    num_tokens_side: int = Field(ge=1, description="Token grid side; the grid is square")
    depth: int = Field(ge=1, description="Number of Permutator blocks")

    @model_validator(mode="after")
    def check_segments(self) -> "StageConfig":
        if self.hidden_size % self.num_tokens_side:
            raise ValueError(
                f"hidden_size {self.hidden_size} is not divisible by num_tokens_side {self.num_tokens_side}"
            )
        return self

    @property
    def segments(self) -> int:
        return self.hidden_size // self.num_tokens_side


class ViPConfig(BaseModel):
    """Architecture of one Vision Permutator."""

    name: str = Field(description="Registry name, e.g. ViP-Small/7")
    stages: list[StageConfig] = Field(min_length=1, description="Stages in forward order")
    num_classes: int = Field(default=1000, ge=1, description="Classifier outputs K")
    mlp_ratio: int = Field(default=MLP_RATIO, ge=1, description="Channel-MLP expansion")
    stochastic_depth_max: float = Field(default=0.0, ge=0.0, lt=1.0, description="Drop rate of the last block")
    stochastic_depth_schedule: Literal["linear", "constant"] = Field(
        default="linear", description="Linear ramp from 0 across depth, or the same rate for every block"
    )
    final_layernorm: bool = Field(default=True, description="Apply LayerNorm before global pooling")
    image_size: int = Field(default=224, ge=1, description="Square input resolution")
    in_channels: int = Field(default=3, ge=1)
    variant: FusionVariant = Field(default=FusionVariant.WEIGHTED, description="Branch construction and fusion")
    sa_reduction: int = Field(default=SPLIT_ATTENTION_REDUCTION, ge=1, description="Split-attention bottleneck ratio")

    @model_validator(mode="after")
    def check_token_arithmetic(self) -> "ViPConfig":
        side = self.image_size
        for index, stage in enumerate(self.stages):
            if side % stage.patch_size:
                raise ValueError(f"stage {index}: extent {side} is not divisible by patch {stage.patch_size}")
            side //= stage.patch_size
            if side != stage.num_tokens_side:
                raise ValueError(f"stage {index}: token grid is {side}x{side}, config says {stage.num_tokens_side}")
            if self.variant.uses_attention and stage.hidden_size % self.sa_reduction:
                raise ValueError(
                    f"stage {index}: hidden_size {stage.hidden_size} is not divisible by sa_reduction {self.sa_reduction}"
                )
        return self

    @property
    def total_depth(self) -> int:
        return sum(stage.depth for stage in self.stages)

    def with_variant(self, variant: Union[FusionVariant, str]) -> "ViPConfig":
        return self.model_copy(update={"variant": FusionVariant(variant)})

    @classmethod
    def from_file(cls, path: PathLike) -> "ViPConfig":
        return load_json_model(cls, path)

    def to_file(self, path: PathLike) -> None:
        Path(path).write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")


class AugmentationConfig(BaseModel):
    """Augmentation toggles and strengths."""

    cutout: bool = Field(default=False)
    cutout_size: int = Field(default=8, ge=0, description="Side of the erased square in pixels")
    cutout_mean_fill: bool = Field(default=False, description="Fill with the image mean instead of zeros")
    mixup: bool = Field(default=False)
    mixup_alpha: float = Field(default=0.8, gt=0.0)
    cutmix: bool = Field(default=False)
    cutmix_alpha: float = Field(default=1.0, gt=0.0)
    switch_prob: float = Field(
        default=0.5, ge=0.0, le=1.0, description="Chance of CutMix over MixUp when both are enabled"
    )


class SyntheticSpec(BaseModel):
    """Position-coupled synthetic classification task."""

    image_side: int = Field(default=32, ge=4)
    channels: int = Field(default=3, ge=1)
    num_classes: int = Field(default=8, ge=2)
    grid_rows: int = Field(default=4, ge=1, description="Row bands of the class-position grid")
    grid_cols: int = Field(default=2, ge=1, description="Column bands of the class-position grid")
    train_per_class: int = Field(default=100, ge=1)
    val_per_class: int = Field(default=25, ge=1)
    motif_size: int = Field(default=6, ge=1)
    jitter: int = Field(default=2, ge=0, description="Maximum motif offset inside its cell")
    noise_std: float = Field(default=0.3, ge=0.0)
    nuisance: float = Field(default=0.0, ge=0.0, description="Per-image brightness/contrast variation")

    @model_validator(mode="after")
    def check_layout(self) -> "SyntheticSpec":
        if self.num_classes != self.grid_rows * self.grid_cols:
            raise ValueError("num_classes must equal grid_rows * grid_cols")
        cell_h = self.image_side // self.grid_rows
        cell_w = self.image_side // self.grid_cols
        if self.motif_size + self.jitter > min(cell_h, cell_w):
            raise ValueError(f"motif_size + jitter must fit a {cell_h}x{cell_w} cell")
        return self


class TrainConfig(BaseModel):
    """Desk-scale training run."""

    architecture: str = Field(default="ViP-Tiny", description="Registry name of the model")
    architecture_file: Optional[str] = Field(default=None, description="ViPConfig JSON overriding the registry")
    variant: Optional[FusionVariant] = Field(default=None, description="Override the architecture's fusion variant")
    seed: int = Field(default=0, ge=0)
    batch_size: int = Field(default=64, ge=1)
    base_lr: float = Field(default=1e-3, gt=0.0, description="Peak lr at the reference batch size")
    lr_denominator: int = Field(default=1024, ge=1, description="Reference batch size of the scaling rule")
    weight_decay: float = Field(default=5e-2, ge=0.0)
    betas: tuple[float, float] = Field(default=(0.9, 0.999))
    eps: float = Field(default=1e-8, gt=0.0)
    epochs: int = Field(default=30, ge=1)
    warmup_epochs: Optional[float] = Field(default=None, ge=0.0, description="Defaults to 5/300 of the run")
    schedule: Literal["cosine", "constant"] = Field(default="cosine")
    min_lr_ratio: float = Field(default=0.01, ge=0.0, le=1.0, description="Floor of the cosine phase")
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)
    dataset_path: Optional[str] = Field(default=None, description="VIPDATA1 training file")
    val_dataset_path: Optional[str] = Field(default=None, description="VIPDATA1 validation file")
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    output_dir: str = Field(default="runs/vip")
    metrics_file: str = Field(default="metrics.jsonl", description="Relative to output_dir unless absolute")
    loader_workers: int = Field(default=1, ge=1, description="Threads preparing batches")
    resume: bool = Field(default=False, description="Continue from output_dir/last.ckpt when present")

    @field_validator("betas")
    @classmethod
    def check_betas(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError("betas must lie in [0, 1)")
        return value

    @model_validator(mode="after")
    def check_datasets(self) -> "TrainConfig":
        if (self.dataset_path is None) != (self.val_dataset_path is None):
            raise ValueError("dataset_path and val_dataset_path must be given together")
        return self

    @property
    def resolved_warmup_epochs(self) -> float:
        return self.warmup_epochs if self.warmup_epochs is not None else self.epochs * 5.0 / 300.0

    @classmethod
    def from_file(cls, path: PathLike) -> "TrainConfig":
        return load_json_model(cls, path)


class BenchReport(BaseModel):
    """Forward throughput of one model."""

    model: str
    batch: int = Field(ge=1)
    warmup: int = Field(ge=0)
    iters: int = Field(ge=10, description="Timed iterations")
    mean_img_per_s: float
    std_img_per_s: float = Field(description="Standard deviation of the per-iteration rates")
    params: int
    workers: int = Field(default=1, ge=1)

    @property
    def relative_std(self) -> float:
        return self.std_img_per_s / self.mean_img_per_s if self.mean_img_per_s > 0 else math.inf


class CLISettings(BaseModel):
    """User defaults read from ~/.vision_permutator.config.json."""

    default_model: str = Field(default="ViP-Tiny")
    num_workers: int = Field(default=1, ge=1)
    bench_batch: int = Field(default=32, ge=1)
    bench_iters: int = Field(default=10, ge=10)
    bench_warmup: int = Field(default=3, ge=0)
    gradcheck_tol: float = Field(default=1e-3, gt=0.0)
