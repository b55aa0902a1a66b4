"""Tests for CutOut, MixUp, CutMix and the soft-target cross-entropy."""
import math

import numpy as np
import pytest

from vision_permutator.autograd.gradcheck import gradcheck
from vision_permutator.autograd.tensor import Tensor
from vision_permutator.models.config import AugmentationConfig
from vision_permutator.models.errors import ShapeError
from vision_permutator.services.augmentation_service import (
    AugmentationService,
    cutmix,
    cutout,
    mixup,
    one_hot,
    sample_beta,
    soft_cross_entropy,
)


@pytest.fixture
def pair(rng):
    """Two 4-image batches with one-hot labels over 5 classes."""
    a = rng.standard_normal((4, 8, 8, 3))
    b = rng.standard_normal((4, 8, 8, 3))
    return a, one_hot([0, 1, 2, 3], 5, np.float64), b, one_hot([4, 4, 0, 1], 5, np.float64)


def test_one_hot_rows():
    labels = one_hot([2, 0], 3)
    assert labels.dtype == np.float32
    np.testing.assert_array_equal(labels, [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(ValueError):
        one_hot([3], 3)


def test_sample_beta_is_reproducible():
    draws = [sample_beta(0.8, np.random.default_rng(9)) for _ in range(2)]
    assert draws[0] == draws[1]
    assert 0.0 <= draws[0] <= 1.0
    with pytest.raises(ValueError):
        sample_beta(0.0, np.random.default_rng(0))


def test_mixup_with_unit_lambda_returns_first_batch(pair, rng):
    a, la, b, lb = pair
    mixed, targets = mixup(a, la, b, lb, 0.8, rng, lam=1.0)
    assert np.array_equal(mixed, a)
    assert np.array_equal(targets, la)


def test_mixup_is_linear(pair, rng):
    a, la, b, lb = pair
    mixed, targets = mixup(a, la, b, lb, 0.8, rng, lam=0.3)
    assert abs(mixed.mean() - (0.3 * a.mean() + 0.7 * b.mean())) <= 1e-6
    np.testing.assert_allclose(targets.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(targets[0], [0.3, 0, 0, 0, 0.7])


def test_mixup_sampled_labels_sum_to_one(pair):
    a, la, b, lb = pair
    for seed in range(5):
        _, targets = mixup(a, la, b, lb, 0.8, np.random.default_rng(seed))
        np.testing.assert_allclose(targets.sum(axis=1), 1.0, atol=1e-6)


def test_mixup_rejects_mismatched_batches(pair, rng):
    a, la, b, lb = pair
    with pytest.raises(ShapeError):
        mixup(a, la, b[:2], lb[:2], 0.8, rng)


def test_cutmix_with_unit_lambda_is_identity(pair, rng):
    a, la, b, lb = pair
    mixed, targets = cutmix(a, la, b, lb, 1.0, rng, lam=1.0)
    assert np.array_equal(mixed, a)
    np.testing.assert_array_equal(targets, la)


@pytest.mark.parametrize("seed", range(8))
def test_cutmix_label_weight_is_pasted_fraction(seed):
    """The partner's label weight equals the share of pixels copied from it, clipping included."""
    rng = np.random.default_rng(seed)
    a = np.zeros((2, 10, 10, 1))
    b = rng.uniform(1.0, 2.0, size=(2, 10, 10, 1))
    la, lb = one_hot([0, 0], 2, np.float64), one_hot([1, 1], 2, np.float64)
    mixed, targets = cutmix(a, la, b, lb, 1.0, rng)
    pasted = mixed != 0
    assert np.array_equal(mixed[pasted], b[pasted])
    fraction = pasted[0].sum() / pasted[0].size
    assert targets[0, 1] == pytest.approx(fraction, abs=1e-12)
    np.testing.assert_allclose(targets.sum(axis=1), 1.0, atol=1e-6)


def test_cutout_size_zero_is_identity(pair, rng):
    a = pair[0]
    assert np.array_equal(cutout(a, 0, rng), a)


def test_cutout_rejects_oversized_square(pair, rng):
    with pytest.raises(ValueError):
        cutout(pair[0], 9, rng)


@pytest.mark.parametrize("seed", range(6))
def test_cutout_erases_one_clipped_square(seed):
    rng = np.random.default_rng(seed)
    batch = rng.uniform(1.0, 2.0, size=(3, 12, 12, 2))
    out = cutout(batch, 4, rng)
    erased = np.all(out == 0.0, axis=-1)
    for i in range(3):
        assert 0 < erased[i].sum() <= 16
    kept = ~erased
    assert np.array_equal(out[kept], batch[kept])


def test_cutout_mean_fill(rng):
    batch = rng.uniform(1.0, 2.0, size=(1, 8, 8, 3))
    out = cutout(batch, 8, np.random.default_rng(1), mean_fill=True)
    changed = np.any(out != batch, axis=-1)
    assert changed.any()
    np.testing.assert_allclose(out[changed], np.broadcast_to(batch[0].mean(axis=(0, 1)), out[changed].shape))


def test_soft_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((3, 8)), dtype=np.float64)
    loss = soft_cross_entropy(logits, one_hot([0, 5, 7], 8, np.float64))
    assert loss.shape == ()
    assert loss.item() == pytest.approx(math.log(8), abs=1e-12)


def test_soft_cross_entropy_self_target_is_entropy(rng):
    z = rng.standard_normal((2, 6))
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    loss = soft_cross_entropy(Tensor(z, dtype=np.float64), p)
    entropy = -(p * np.log(p)).sum(axis=1).mean()
    assert loss.item() == pytest.approx(entropy, abs=1e-12)


def test_soft_cross_entropy_validates_targets():
    logits = Tensor(np.zeros((2, 3)), dtype=np.float64)
    with pytest.raises(ValueError):
        soft_cross_entropy(logits, np.full((2, 3), 0.5))
    with pytest.raises(ShapeError):
        soft_cross_entropy(logits, np.full((2, 4), 0.25))


def test_soft_cross_entropy_gradient(rng):
    targets = np.array([[0.2, 0.8, 0.0], [0.5, 0.25, 0.25]])
    logits = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
    report = gradcheck(lambda t: soft_cross_entropy(t, targets), logits, tol=1e-4)
    assert report.passed


def test_service_disabled_passes_batch_through(pair, rng):
    a, la, _, _ = pair
    service = AugmentationService()
    assert not service.enabled
    images, targets = service.apply(a, la, rng)
    assert images is a and targets is la


def test_service_mixes_with_both_methods(pair):
    a, la, _, _ = pair
    service = AugmentationService(AugmentationConfig(cutout=True, cutout_size=2, mixup=True, cutmix=True))
    assert service.enabled
    for seed in range(4):
        images, targets = service.apply(a, la, np.random.default_rng(seed))
        assert images.shape == a.shape
        np.testing.assert_allclose(targets.sum(axis=1), 1.0, atol=1e-6)
