"""Tests for the architecture registry, model assembly and parameter accounting."""
import numpy as np
import pytest

from vision_permutator.model_zoo import (
    REFERENCE_PARAMS_M,
    TINY_MODEL,
    VisionPermutator,
    build,
    count_params,
    forward,
    get_config,
    model_gradcheck,
    param_breakdown,
    registry,
    stochastic_depth_rates,
)
from vision_permutator.models.config import StageConfig, ViPConfig
from vision_permutator.models.errors import ConfigError, ShapeError
from vision_permutator.nn.layers import LinearLayer, Mode, ParamStore
from vision_permutator.permutator import FusionVariant

NAMED_ORDER = ["ViP-Small/16", "ViP-Small/7", "ViP-Small/14", "ViP-Medium/7", "ViP-Large/7"]


@pytest.fixture
def two_stage_config():
    """A miniature fine-then-coarse model with the same layout as the /7 configs."""
    return ViPConfig(
        name="two-stage",
        stages=[
            StageConfig(patch_size=2, hidden_size=32, num_tokens_side=16, depth=1),
            StageConfig(patch_size=2, hidden_size=64, num_tokens_side=8, depth=2),
        ],
        num_classes=10,
        image_size=32,
        stochastic_depth_max=0.5,
    )


def test_registry_entries():
    configs = registry()
    assert set(configs) == set(REFERENCE_PARAMS_M) | {TINY_MODEL}
    assert configs["ViP-Small/7"].stages[0].hidden_size == 192
    assert configs["ViP-Large/7"].total_depth == 36
    assert configs["ViP-Small/14"].stages[0].segments == 24
    assert configs["ViP-Small/16"].stages[0].num_tokens_side == 14
    assert configs[TINY_MODEL].num_classes == 8


def test_unknown_model_is_config_error():
    with pytest.raises(ConfigError) as excinfo:
        get_config("ViP-Huge/3")
    assert excinfo.value.field == "model"


def test_counts_match_reference_table():
    """Every named config lands within 10% of its reference size."""
    for name, reference in REFERENCE_PARAMS_M.items():
        total = count_params(get_config(name)) / 1e6
        assert abs(total - reference) / reference <= 0.10, (name, total)


def test_count_ordering():
    counts = [count_params(get_config(name)) for name in NAMED_ORDER]
    assert counts == sorted(counts)
    assert len(set(counts)) == len(counts)


def test_linear_closed_form_count():
    assert LinearLayer.param_count(384, 384) == 147_840


@pytest.mark.parametrize("name", NAMED_ORDER + [TINY_MODEL])
def test_breakdown_sums_to_total(name):
    config = get_config(name)
    breakdown = param_breakdown(config)
    assert sum(breakdown.values()) == count_params(config)
    assert list(breakdown)[-1] == "head"
    assert len(breakdown) == len(config.stages) + 1


def test_closed_form_matches_registered_tensors(tiny_config, two_stage_config):
    for config in (tiny_config, two_stage_config, tiny_config.with_variant("vanilla")):
        model = VisionPermutator(config, ParamStore())
        assert model.param_count() == count_params(config)


def test_parameter_names_are_hierarchical(tiny_model):
    names = tiny_model.store.names()
    assert names[0] == "stages.0.embed.weight"
    assert "stages.0.blocks.3.permute.proj_h.weight" in names
    assert "stages.0.blocks.0.reweight.expand.bias" in names
    assert names[-2:] == ["head.classifier.weight", "head.classifier.bias"]


def test_tiny_forward_shape_and_determinism(tiny_model, rng):
    images = rng.standard_normal((2, 32, 32, 3)).astype(np.float32)
    logits = forward(tiny_model, images, Mode.EVAL)
    assert logits.shape == (2, 8)
    assert logits.dtype == np.float32
    assert np.array_equal(logits.numpy(), tiny_model(images).numpy())


def test_identical_images_give_identical_rows(tiny_model, rng):
    image = rng.standard_normal((1, 32, 32, 3)).astype(np.float32)
    logits = tiny_model.forward(np.repeat(image, 2, axis=0)).numpy()
    np.testing.assert_allclose(logits[0], logits[1], rtol=1e-6, atol=1e-7)


def test_same_seed_builds_identical_models(tiny_config):
    first = build(tiny_config, np.random.default_rng(11))
    second = build(tiny_config, np.random.default_rng(11))
    for name in first.store:
        assert np.array_equal(first.store[name].numpy(), second.store[name].numpy())


def test_wrong_resolution_is_shape_error(tiny_model):
    with pytest.raises(ShapeError):
        tiny_model.forward(np.zeros((1, 16, 16, 3), dtype=np.float32))
    with pytest.raises(ShapeError):
        tiny_model.forward(np.zeros((32, 32, 3), dtype=np.float32))


def test_train_mode_without_drop_matches_eval(tiny_model, rng):
    images = rng.standard_normal((2, 32, 32, 3)).astype(np.float32)
    train = tiny_model.forward(images, Mode.TRAIN, rng).numpy()
    assert np.array_equal(train, tiny_model.forward(images).numpy())


def test_two_stage_forward(two_stage_config, rng):
    model = build(two_stage_config, rng)
    images = rng.standard_normal((2, 32, 32, 3)).astype(np.float32)
    assert model.forward(images).shape == (2, 10)
    dropped = model.forward(images, Mode.TRAIN, np.random.default_rng(3))
    assert dropped.shape == (2, 10)
    with pytest.raises(ValueError):
        model.forward(images, Mode.TRAIN)


def test_small14_forward_gives_imagenet_logits():
    """A full-resolution pass through the 16x16-token configuration."""
    config = get_config("ViP-Small/14")
    model = VisionPermutator(config, ParamStore())
    logits = model.forward(np.zeros((1, 224, 224, 3), dtype=np.float32))
    assert logits.shape == (1, 1000)


def test_stochastic_depth_schedules(two_stage_config):
    rates = stochastic_depth_rates(get_config("ViP-Large/7"))
    assert len(rates) == 36
    assert rates[0] == 0.0
    assert rates[-1] == pytest.approx(0.3)
    assert all(a < b for a, b in zip(rates, rates[1:]))
    constant = two_stage_config.model_copy(update={"stochastic_depth_schedule": "constant"})
    assert stochastic_depth_rates(constant) == [0.5, 0.5, 0.5]
    assert stochastic_depth_rates(get_config(TINY_MODEL)) == [0.0] * 4


def test_with_variant_copies(tiny_config):
    ablated = tiny_config.with_variant(FusionVariant.NO_HEIGHT)
    assert ablated.variant == FusionVariant.NO_HEIGHT
    assert tiny_config.variant == FusionVariant.WEIGHTED
    assert count_params(ablated) == count_params(tiny_config)
    assert count_params(tiny_config.with_variant("vanilla")) < count_params(tiny_config)


def test_config_file_round_trip(tmp_path):
    config = get_config("ViP-Medium/7")
    path = tmp_path / "medium.json"
    config.to_file(path)
    assert ViPConfig.from_file(path) == config


def test_config_file_reports_failing_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x", "stages": [{"patch_size": 4, "hidden_size": 30, "num_tokens_side": 8, "depth": 1}]}')
    with pytest.raises(ConfigError) as excinfo:
        ViPConfig.from_file(path)
    assert excinfo.value.field.startswith("stages")


def test_config_rejects_token_mismatch():
    with pytest.raises(ValueError):
        ViPConfig(
            name="bad",
            stages=[StageConfig(patch_size=4, hidden_size=64, num_tokens_side=16, depth=1)],
            image_size=32,
        )


def test_tiny_model_passes_gradcheck(tiny_config):
    """Every parameter of a 64-bit ViP-Tiny agrees with finite differences."""
    report = model_gradcheck(tiny_config, tol=1e-3, eps=1e-5, max_elements=2)
    assert report.passed, report.worst
    assert report.max_rel_error <= 1e-3
    assert len(report.entries) == len(build(tiny_config, np.random.default_rng(0)).store)
