"""
Service for parameter updates: the linear lr scaling rule, the warmup + cosine
schedule and AdamW with decoupled weight decay.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vision_permutator.interfaces.service_interfaces import OptimizerServiceInterface
from vision_permutator.models.errors import CheckpointError, GradientError
from vision_permutator.nn.layers import ParamStore

STATE_PREFIX = "__adamw__"


def lr_for(batch_size: int, base: float = 1e-3, denom: int = 1024) -> float:
    """Peak learning rate ``base * batch_size / denom``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    return base * (batch_size / denom)


def schedule(
    step: int,
    total_steps: int,
    warmup_steps: int,
    peak_lr: float,
    min_lr_ratio: float = 0.01,
    kind: str = "cosine",
) -> float:
    """
    Learning rate at ``step``.

    Linear warmup from 0 to ``peak_lr`` over ``warmup_steps``, then either a cosine
    decay to ``peak_lr * min_lr_ratio`` at ``total_steps`` or a constant plateau.
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    if kind == "constant":
        return peak_lr
    if kind != "cosine":
        raise ValueError(f"unknown schedule kind '{kind}'")
    floor = peak_lr * min_lr_ratio
    span = total_steps - warmup_steps
    progress = (step - warmup_steps) / span if span > 0 else 1.0
    return floor + (peak_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    """First/second moments per parameter and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_store(cls, store: ParamStore) -> "AdamWState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in store.items()},
            v={name: np.zeros_like(t.data) for name, t in store.items()},
        )

    def to_entries(self) -> dict[str, np.ndarray]:
        """Flatten into reserved checkpoint entries."""
        entries = {f"{STATE_PREFIX}.step": np.array([self.step], dtype=np.float32)}
        for name in self.m:
            entries[f"{STATE_PREFIX}.m.{name}"] = self.m[name]
            entries[f"{STATE_PREFIX}.v.{name}"] = self.v[name]
        return entries

    @classmethod
    def from_entries(cls, entries: dict[str, np.ndarray], store: ParamStore) -> "AdamWState":
        step_key = f"{STATE_PREFIX}.step"
        if step_key not in entries:
            raise CheckpointError("checkpoint carries no optimizer state", name=step_key)
        state = cls(step=int(entries[step_key].reshape(-1)[0]))
        for name, tensor in store.items():
            for moment, target in (("m", state.m), ("v", state.v)):
                key = f"{STATE_PREFIX}.{moment}.{name}"
                if key not in entries:
                    raise CheckpointError("missing optimizer moment", name=key)
                if entries[key].shape != tensor.shape:
                    raise CheckpointError(f"moment shape {entries[key].shape} != {tensor.shape}", name=key)
                target[name] = entries[key].astype(tensor.dtype)
        return state


def adamw_step(
    store: ParamStore,
    state: AdamWState,
    lr: float,
    weight_decay: float,
    grads: Optional[dict[str, np.ndarray]] = None,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """
    One AdamW update in place.

    Weight decay shrinks decaying parameters by ``1 - lr * wd`` before the Adam step
    and is skipped for biases and LayerNorm parameters. Gradients default to each
    tensor's ``grad``.

    Raises:
        GradientError: If a parameter has no gradient.
    """
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in store.items():
        grad = grads[name] if grads is not None and name in grads else tensor.grad
        if grad is None:
            raise GradientError(f"no gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        p = tensor.data
        if weight_decay and store.decays(name):
            p *= p.dtype.type(1.0 - lr * weight_decay)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * np.square(grad)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


class AdamWService(OptimizerServiceInterface):
    """Stateful AdamW bound to fixed hyperparameters."""

    def __init__(
        self,
        store: ParamStore,
        weight_decay: float = 5e-2,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        state: Optional[AdamWState] = None,
    ):
        self.weight_decay = weight_decay
        self.betas = tuple(betas)
        self.eps = eps
        self.state = state or AdamWState.for_store(store)

    def step(self, store: ParamStore, lr: float) -> None:
        adamw_step(store, self.state, lr, self.weight_decay, betas=self.betas, eps=self.eps)
