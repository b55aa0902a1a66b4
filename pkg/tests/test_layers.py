"""Tests for the neural-network primitives."""
import math

import numpy as np
import pytest
from scipy.stats import truncnorm

from vision_permutator.autograd.tensor import Tensor
from vision_permutator.models.errors import ShapeError
from vision_permutator.nn.layers import (
    INIT_STD,
    INIT_TRUNCATION,
    LayerNormLayer,
    LinearLayer,
    Mode,
    ParamKind,
    ParamStore,
    downsample_embed,
    gelu,
    global_pool_head,
    init_params,
    layer_norm,
    linear_forward,
    normalize,
    patch_embed,
    softmax,
    stochastic_depth,
    truncated_normal,
)
from vision_permutator.oracles import layer_arrays, linear_oracle, unfold_oracle


def _f64(array) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float64), dtype=np.float64)


def test_param_store_rejects_duplicate_names():
    store = ParamStore()
    store.add("w", (2, 2), ParamKind.WEIGHT)
    with pytest.raises(ValueError):
        store.add("w", (2, 2), ParamKind.WEIGHT)


def test_param_store_decay_flags_and_totals():
    """Only weight matrices decay; totals count every element."""
    store = ParamStore()
    LinearLayer(store, "fc", 3, 4)
    LayerNormLayer(store, "norm", 4)
    assert store.names() == ["fc.weight", "fc.bias", "norm.weight", "norm.bias"]
    assert [store.decays(n) for n in store] == [True, False, False, False]
    assert store.total_params() == 3 * 4 + 4 + 2 * 4
    assert len(store) == 4


def test_param_store_assign_checks_shape():
    store = ParamStore()
    store.add("w", (2, 3), ParamKind.WEIGHT)
    store.assign("w", np.ones((2, 3)))
    assert store["w"].numpy().sum() == 6.0
    with pytest.raises(ShapeError):
        store.assign("w", np.ones((3, 2)))


def test_param_store_astype_keeps_layout():
    store = ParamStore()
    LinearLayer(store, "fc", 2, 2)
    wide = store.astype(np.float64)
    assert wide.dtype == np.float64
    assert wide.names() == store.names()
    assert wide["fc.weight"].dtype == np.float64
    assert wide.decays("fc.weight") and not wide.decays("fc.bias")


def test_linear_identity_and_hand_example():
    store = ParamStore(np.float64)
    ident = LinearLayer(store, "ident", 3, 3)
    ident.weight.data[...] = np.eye(3)
    x = _f64([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(linear_forward(ident, x).numpy(), x.numpy())

    fc = LinearLayer(store, "fc", 2, 1)
    fc.weight.data[...] = [[1.0], [1.0]]
    fc.bias.data[...] = [0.5]
    np.testing.assert_allclose(linear_forward(fc, _f64([1.0, 2.0])).numpy(), [3.5])


def test_linear_extent_mismatch():
    layer = LinearLayer(ParamStore(), "fc", 4, 2)
    with pytest.raises(ShapeError) as excinfo:
        linear_forward(layer, Tensor(np.zeros((3, 5))))
    assert excinfo.value.shapes == ((3, 5), (4, 2))


def test_layer_norm_examples():
    gamma, beta = _f64(np.ones(2)), _f64(np.zeros(2))
    np.testing.assert_allclose(layer_norm(_f64([1.0, -1.0]), gamma, beta).numpy(), [1.0, -1.0], atol=1e-6)
    constant = layer_norm(_f64([3.0, 3.0]), gamma, beta).numpy()
    assert np.all(np.abs(constant) <= 1e-3)


def test_normalize_moments(rng):
    """Every non-constant token has zero mean and unit biased variance."""
    x = rng.normal(2.0, 5.0, size=(6, 7, 16))
    y = normalize(_f64(x)).numpy()
    assert np.abs(y.mean(axis=-1)).max() <= 1e-6
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-3)


def test_layer_norm_rejects_wrong_affine_shape():
    with pytest.raises(ShapeError):
        layer_norm(_f64(np.zeros((2, 3))), _f64(np.ones(4)), _f64(np.zeros(4)))


def test_gelu_values():
    out = gelu(_f64([0.0, 1.0, 10.0, -10.0])).numpy()
    assert out[0] == 0.0
    assert abs(out[1] - 0.841345) < 1e-5
    assert abs(out[2] - 10.0) < 1e-12
    assert abs(out[3]) < 1e-12


def test_softmax_examples():
    np.testing.assert_allclose(softmax(_f64(np.full(5, 2.5))).numpy(), np.full(5, 0.2))
    np.testing.assert_allclose(softmax(_f64([0.0, math.log(3.0)])).numpy(), [0.25, 0.75], rtol=1e-12)


def test_softmax_is_normalized_and_stable(rng):
    x = rng.normal(0.0, 30.0, size=(4, 9))
    x[0] += 1000.0
    p = softmax(Tensor(x.astype(np.float32)), axis=-1).numpy()
    assert np.all(np.isfinite(p))
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    q = softmax(_f64(rng.standard_normal((3, 4))), axis=0).numpy()
    assert np.all(q > 0)
    np.testing.assert_allclose(q.sum(axis=0), 1.0, atol=1e-12)


def test_stochastic_depth_identity_cases(rng):
    x = _f64(rng.standard_normal((2, 4, 4, 3)))
    assert stochastic_depth(x, 0.0, Mode.TRAIN, rng) is x
    assert stochastic_depth(x, 0.3, Mode.EVAL) is x


def test_stochastic_depth_drops_whole_samples(rng):
    """Each sample's branch is either zeroed or scaled by 1 / (1 - rate)."""
    x = _f64(np.ones((64, 2, 2, 3)))
    out = stochastic_depth(x, 0.25, Mode.TRAIN, rng).numpy()
    per_sample = out.reshape(64, -1)
    for row in per_sample:
        assert np.all(row == row[0])
        assert row[0] in (0.0, 1.0 / 0.75)


def test_stochastic_depth_is_unbiased():
    x = _f64(np.ones((20000, 1, 1, 1)))
    out = stochastic_depth(x, 0.3, Mode.TRAIN, np.random.default_rng(5)).numpy()
    assert abs(out.mean() - 1.0) < 0.02


def test_stochastic_depth_argument_errors(rng):
    x = _f64(np.ones((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        stochastic_depth(x, 1.0, Mode.TRAIN, rng)
    with pytest.raises(ValueError):
        stochastic_depth(x, 0.2, Mode.TRAIN, None)


def test_patch_embed_matches_unfold_oracle(rng):
    store = ParamStore(np.float64)
    layer = LinearLayer(store, "embed", 4 * 4 * 3, 5)
    init_params(store, rng)
    layer.bias.data[...] = rng.standard_normal(5)
    image = rng.standard_normal((8, 8, 3))
    out = patch_embed(_f64(image), 4, layer).numpy()
    expected = linear_oracle(unfold_oracle(image, 4), *layer_arrays(layer))
    assert out.shape == (2, 2, 5)
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_patch_embed_batched_and_token_extents():
    store = ParamStore()
    layer = LinearLayer(store, "embed", 14 * 14 * 3, 8)
    out = patch_embed(Tensor(np.zeros((1, 224, 224, 3))), 14, layer)
    assert out.shape == (1, 16, 16, 8)
    assert not out.numpy().any()


def test_patch_embed_indivisible_image():
    layer = LinearLayer(ParamStore(), "embed", 4 * 4 * 3, 2)
    with pytest.raises(ShapeError):
        patch_embed(Tensor(np.zeros((10, 10, 3))), 4, layer)


def test_downsample_embed_halves_grid():
    layer = LinearLayer(ParamStore(), "merge", 4 * 192, 384)
    out = downsample_embed(Tensor(np.zeros((32, 32, 192))), layer)
    assert out.shape == (16, 16, 384)


def test_downsample_embed_merges_two_by_two_blocks(rng):
    store = ParamStore(np.float64)
    layer = LinearLayer(store, "merge", 4 * 3, 6)
    init_params(store, rng)
    grid = rng.standard_normal((2, 4, 4, 3))
    out = downsample_embed(_f64(grid), layer).numpy()
    for b in range(2):
        expected = linear_oracle(unfold_oracle(grid[b], 2), *layer_arrays(layer))
        np.testing.assert_allclose(out[b], expected, rtol=1e-12, atol=1e-12)


def test_global_pool_head_on_constant_grid(rng):
    """Pooling is the identity on a constant grid, so the head sees LN(token)."""
    store = ParamStore(np.float64)
    norm = LayerNormLayer(store, "norm", 6)
    classifier = LinearLayer(store, "cls", 6, 3)
    init_params(store, rng)
    token = rng.standard_normal(6)
    grid = np.broadcast_to(token, (4, 4, 6)).copy()
    logits = global_pool_head(_f64(grid), classifier, norm).numpy()
    normed = (token - token.mean()) / np.sqrt(token.var() + norm.eps)
    expected = normed @ classifier.weight.data + classifier.bias.data
    np.testing.assert_allclose(logits, expected, rtol=1e-10, atol=1e-12)


def test_truncated_normal_statistics():
    """Samples stay within the truncation bound and have the target spread."""
    sample = truncated_normal((384, 384), np.random.default_rng(1))
    bound = INIT_TRUNCATION * INIT_STD / truncnorm.std(-INIT_TRUNCATION, INIT_TRUNCATION)
    assert np.abs(sample).max() <= bound + 1e-12
    assert abs(sample.std() - INIT_STD) <= 0.002


def test_init_params_by_kind_and_determinism():
    def make():
        store = ParamStore()
        LinearLayer(store, "fc", 8, 8)
        LayerNormLayer(store, "norm", 8)
        init_params(store, np.random.default_rng(42))
        return store

    first, second = make(), make()
    assert not first["fc.bias"].numpy().any()
    assert not first["norm.bias"].numpy().any()
    np.testing.assert_array_equal(first["norm.weight"].numpy(), np.ones(8))
    assert first["fc.weight"].numpy().std() > 0
    for name in first:
        assert np.array_equal(first[name].numpy(), second[name].numpy())
