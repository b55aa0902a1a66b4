"""
Service for batch augmentation (CutOut, MixUp, CutMix) and the soft-target loss.

Images are ``[B, H, W, C]`` float arrays; labels are ``[B, K]`` probability rows.
"""
from typing import Optional

import numpy as np
from scipy.stats import beta as beta_dist

from vision_permutator.autograd.tensor import Tensor, mean, mul, neg
from vision_permutator.autograd.tensor import sum as reduce_sum
from vision_permutator.interfaces.service_interfaces import AugmentationServiceInterface
from vision_permutator.models.config import AugmentationConfig
from vision_permutator.models.errors import ShapeError
from vision_permutator.nn.layers import log_softmax

TARGET_SUM_TOL = 1e-5


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) draw by inverse transform of one uniform."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(beta_dist.ppf(rng.random(), alpha, alpha))


def _check_pair(batch_a: np.ndarray, labels_a: np.ndarray, batch_b: np.ndarray, labels_b: np.ndarray) -> None:
    if batch_a.shape != batch_b.shape or labels_a.shape != labels_b.shape:
        raise ShapeError("augmentation: paired batches differ", batch_a.shape, batch_b.shape)
    if batch_a.shape[0] != labels_a.shape[0]:
        raise ShapeError("augmentation: images and labels have different batch sizes", batch_a.shape, labels_a.shape)


def mixup(
    batch_a: np.ndarray,
    labels_a: np.ndarray,
    batch_b: np.ndarray,
    labels_b: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    lam: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Blend images and labels as ``lam * a + (1 - lam) * b`` with ``lam ~ Beta(alpha, alpha)``."""
    _check_pair(batch_a, labels_a, batch_b, labels_b)
    lam = sample_beta(alpha, rng) if lam is None else float(lam)
    if lam == 1.0:
        return batch_a.copy(), labels_a.copy()
    mixed = lam * batch_a + (1.0 - lam) * batch_b
    targets = lam * labels_a + (1.0 - lam) * labels_b
    return mixed.astype(batch_a.dtype), targets.astype(labels_a.dtype)


def cutmix_box(height: int, width: int, lam: float, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Box ``(y1, y2, x1, x2)`` of area ratio ``1 - lam``, uniformly centered and clipped."""
    cut = np.sqrt(1.0 - lam)
    cut_h, cut_w = int(height * cut), int(width * cut)
    cy = int(rng.integers(height))
    cx = int(rng.integers(width))
    y1 = int(np.clip(cy - cut_h // 2, 0, height))
    y2 = int(np.clip(cy + cut_h // 2, 0, height))
    x1 = int(np.clip(cx - cut_w // 2, 0, width))
    x2 = int(np.clip(cx + cut_w // 2, 0, width))
    return y1, y2, x1, x2


def cutmix(
    batch_a: np.ndarray,
    labels_a: np.ndarray,
    batch_b: np.ndarray,
    labels_b: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    lam: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Paste a rectangle of ``b`` into ``a``.

    The label weight of ``b`` is the pasted fraction after clipping, not the
    sampled ``1 - lam``.
    """
    _check_pair(batch_a, labels_a, batch_b, labels_b)
    lam = sample_beta(alpha, rng) if lam is None else float(lam)
    height, width = batch_a.shape[1:3]
    y1, y2, x1, x2 = cutmix_box(height, width, lam, rng)
    mixed = batch_a.copy()
    mixed[:, y1:y2, x1:x2, :] = batch_b[:, y1:y2, x1:x2, :]
    pasted = (y2 - y1) * (x2 - x1) / float(height * width)
    targets = (1.0 - pasted) * labels_a + pasted * labels_b
    return mixed, targets.astype(labels_a.dtype)


def cutout(batch: np.ndarray, size: int, rng: np.random.Generator, mean_fill: bool = False) -> np.ndarray:
    """Erase one ``size x size`` square per image, clipped to the image."""
    height, width = batch.shape[1:3]
    if size > min(height, width):
        raise ValueError(f"cutout size {size} exceeds the image side")
    out = batch.copy()
    if size == 0:
        return out
    for i in range(out.shape[0]):
        cy = int(rng.integers(height))
        cx = int(rng.integers(width))
        y1, y2 = max(cy - size // 2, 0), min(cy - size // 2 + size, height)
        x1, x2 = max(cx - size // 2, 0), min(cx - size // 2 + size, width)
        fill = batch[i].mean(axis=(0, 1)) if mean_fill else 0.0
        out[i, y1:y2, x1:x2, :] = fill
    return out


def soft_cross_entropy(logits: Tensor, target_probs: np.ndarray) -> Tensor:
    """
    Mean over the batch of ``-sum(target * log_softmax(logits))``.

    Raises:
        ValueError: If a target row is negative or does not sum to 1.
    """
    target_probs = np.asarray(target_probs)
    if target_probs.shape != logits.shape:
        raise ShapeError("soft_cross_entropy: logits and targets differ", logits.shape, target_probs.shape)
    if np.any(target_probs < 0) or not np.allclose(target_probs.sum(axis=-1), 1.0, atol=TARGET_SUM_TOL):
        raise ValueError("soft_cross_entropy: every target row must be a probability distribution")
    target = Tensor(target_probs, dtype=logits.dtype)
    per_sample = reduce_sum(mul(log_softmax(logits, axis=-1), target), -1)
    return neg(mean(per_sample))


class AugmentationService(AugmentationServiceInterface):
    """Applies the configured augmentations to one training batch."""

    def __init__(self, config: Optional[AugmentationConfig] = None):
        self.config = config or AugmentationConfig()

    @property
    def enabled(self) -> bool:
        return self.config.cutout or self.config.mixup or self.config.cutmix

    def apply(
        self, images: np.ndarray, targets: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        CutOut first, then one of MixUp or CutMix against a shuffled copy of the batch.
        When both mixing methods are enabled CutMix is chosen with ``switch_prob``.
        """
        cfg = self.config
        if cfg.cutout:
            images = cutout(images, cfg.cutout_size, rng, cfg.cutout_mean_fill)
        if not (cfg.mixup or cfg.cutmix):
            return images, targets
        use_cutmix = cfg.cutmix and (not cfg.mixup or rng.random() < cfg.switch_prob)
        partner = rng.permutation(images.shape[0])
        if use_cutmix:
            return cutmix(images, targets, images[partner], targets[partner], cfg.cutmix_alpha, rng)
        return mixup(images, targets, images[partner], targets[partner], cfg.mixup_alpha, rng)
