"""Tests for the learning-rate rules and AdamW."""
import numpy as np
import pytest

from vision_permutator.models.errors import CheckpointError, GradientError
from vision_permutator.nn.layers import ParamKind, ParamStore
from vision_permutator.services.optimizer_service import AdamWService, AdamWState, adamw_step, lr_for, schedule


@pytest.fixture
def scalar_store():
    store = ParamStore(np.float64)
    store.add("w", (1,), ParamKind.WEIGHT)
    store.add("b", (1,), ParamKind.BIAS)
    store["w"].data[...] = 1.0
    store["b"].data[...] = 1.0
    return store


def test_linear_scaling_rule():
    assert lr_for(2048) == 2e-3
    assert lr_for(1024) == 1e-3
    assert lr_for(64) == 6.25e-5
    assert lr_for(32, base=1e-2, denom=32) == 1e-2
    with pytest.raises(ValueError):
        lr_for(0)


def test_schedule_warmup_and_cosine_points():
    peak = 1e-3
    assert schedule(0, 110, 10, peak) == 0.0
    assert schedule(5, 110, 10, peak) == pytest.approx(peak / 2)
    assert schedule(10, 110, 10, peak) == peak
    assert schedule(60, 110, 10, peak) == pytest.approx(peak * 1.01 / 2, abs=1e-9)
    assert schedule(110, 110, 10, peak) == pytest.approx(peak * 0.01)


def test_schedule_is_continuous_at_warmup_boundary():
    peak = 0.5
    before = schedule(99, 1000, 100, peak)
    after = schedule(101, 1000, 100, peak)
    assert abs(before - peak) < peak / 50
    assert abs(after - peak) < peak / 50


def test_schedule_is_monotone_after_warmup():
    rates = [schedule(step, 200, 20, 1.0) for step in range(20, 201)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_schedule_constant_and_errors():
    assert schedule(50, 100, 10, 0.1, kind="constant") == 0.1
    assert schedule(0, 100, 0, 0.1) == 0.1
    with pytest.raises(ValueError):
        schedule(101, 100, 10, 0.1)
    with pytest.raises(ValueError):
        schedule(50, 100, 10, 0.1, kind="step")


def test_zero_gradient_without_decay_is_noop(scalar_store):
    state = AdamWState.for_store(scalar_store)
    grads = {"w": np.zeros(1), "b": np.zeros(1)}
    adamw_step(scalar_store, state, lr=0.1, weight_decay=0.0, grads=grads)
    assert scalar_store["w"].numpy()[0] == 1.0
    assert scalar_store["b"].numpy()[0] == 1.0


def test_first_step_hand_value(scalar_store):
    """Bias correction makes the first step exactly ``lr`` in the gradient's sign."""
    state = AdamWState.for_store(scalar_store)
    adamw_step(scalar_store, state, lr=0.1, weight_decay=0.0, grads={"w": np.ones(1), "b": -np.ones(1)})
    assert scalar_store["w"].numpy()[0] == pytest.approx(0.9, abs=1e-7)
    assert scalar_store["b"].numpy()[0] == pytest.approx(1.1, abs=1e-7)
    assert state.step == 1


def test_decoupled_shrink_law(scalar_store):
    """With zero gradients K steps scale decaying weights by (1 - lr*wd)^K and leave biases alone."""
    state = AdamWState.for_store(scalar_store)
    grads = {"w": np.zeros(1), "b": np.zeros(1)}
    lr, wd = 0.01, 0.05
    for _ in range(100):
        adamw_step(scalar_store, state, lr=lr, weight_decay=wd, grads=grads)
    assert abs(scalar_store["w"].numpy()[0] - (1 - lr * wd) ** 100) <= 1e-7
    assert scalar_store["b"].numpy()[0] == 1.0


def test_missing_gradient_raises(scalar_store):
    state = AdamWState.for_store(scalar_store)
    with pytest.raises(GradientError):
        adamw_step(scalar_store, state, lr=0.1, weight_decay=0.0)


def test_service_uses_tensor_grads(scalar_store):
    service = AdamWService(scalar_store, weight_decay=0.0)
    for _, tensor in scalar_store.items():
        tensor.grad = np.full(1, 2.0)
    service.step(scalar_store, 0.05)
    assert scalar_store["w"].numpy()[0] == pytest.approx(0.95, abs=1e-7)
    assert service.state.step == 1


def test_state_entries_round_trip(scalar_store):
    state = AdamWState.for_store(scalar_store)
    adamw_step(scalar_store, state, lr=0.1, weight_decay=0.01, grads={"w": np.ones(1), "b": np.ones(1)})
    entries = state.to_entries()
    assert all(name.startswith("__adamw__.") for name in entries)
    restored = AdamWState.from_entries(entries, scalar_store)
    assert restored.step == 1
    for name in ("w", "b"):
        assert np.array_equal(restored.m[name], state.m[name])
        assert np.array_equal(restored.v[name], state.v[name])


def test_state_entries_missing_moment(scalar_store):
    entries = AdamWState.for_store(scalar_store).to_entries()
    del entries["__adamw__.v.b"]
    with pytest.raises(CheckpointError) as excinfo:
        AdamWState.from_entries(entries, scalar_store)
    assert excinfo.value.name == "__adamw__.v.b"
    with pytest.raises(CheckpointError):
        AdamWState.from_entries({}, scalar_store)
