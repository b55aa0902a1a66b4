"""
Finite-difference gradient checking.

Analytic gradients from the tape are compared element by element against central
differences ``(f(x + eps e) - f(x - eps e)) / 2 eps``. Both run in 64-bit because
32-bit differences are dominated by rounding noise.
"""
from typing import Callable, Iterable, Optional

import numpy as np
from pydantic import BaseModel, Field

from vision_permutator.autograd.tensor import Tensor, no_grad
from vision_permutator.utils.logger import setup_logger

logger = setup_logger(__name__)

# Denominator floor for the relative error, so exact zeros compare as equal.
REL_ERROR_FLOOR = 1e-6


class GradcheckEntry(BaseModel):
    """Comparison result for one checked tensor."""

    name: str = Field(description="Parameter name, or 'input' for a single tensor check")
    max_rel_error: float = Field(default=0.0)
    worst_index: Optional[list[int]] = Field(default=None, description="Multi-index of the worst element")
    analytic: Optional[float] = None
    numeric: Optional[float] = None
    checked: int = Field(default=0, description="Number of elements compared")


class GradcheckReport(BaseModel):
    """Outcome of a gradient check; failures are reported, never raised."""

    passed: bool
    tol: float
    eps: float
    max_rel_error: float
    worst: Optional[str] = Field(default=None, description="Name of the tensor holding the worst element")
    entries: list[GradcheckEntry] = Field(default_factory=list)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERROR_FLOOR)
    return np.abs(analytic - numeric) / denom


def _scalar(value: Tensor) -> float:
    return float(np.asarray(value.data, dtype=np.float64).reshape(-1)[0])


def _central_difference(fn: Callable[[], Tensor], target: Tensor, flat_index: int, eps: float) -> float:
    flat = target.data.reshape(-1)
    original = flat[flat_index]
    with no_grad():
        flat[flat_index] = original + eps
        plus = _scalar(fn())
        flat[flat_index] = original - eps
        minus = _scalar(fn())
    flat[flat_index] = original
    return (plus - minus) / (2.0 * eps)


def _sample_indices(size: int, limit: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def _check_tensor(
    name: str,
    fn: Callable[[], Tensor],
    target: Tensor,
    eps: float,
    limit: Optional[int],
    rng: np.random.Generator,
) -> GradcheckEntry:
    analytic_full = target.grad if target.grad is not None else np.zeros_like(target.data)
    indices = _sample_indices(target.size, limit, rng)
    if indices.size == 0:
        return GradcheckEntry(name=name)
    analytic = analytic_full.reshape(-1)[indices].astype(np.float64)
    numeric = np.array([_central_difference(fn, target, int(i), eps) for i in indices])
    errors = relative_error(analytic, numeric)
    worst = int(np.argmax(errors))
    return GradcheckEntry(
        name=name,
        max_rel_error=float(errors[worst]),
        worst_index=[int(i) for i in np.unravel_index(int(indices[worst]), target.shape)],
        analytic=float(analytic[worst]),
        numeric=float(numeric[worst]),
        checked=int(indices.size),
    )


def _summarize(entries: list[GradcheckEntry], tol: float, eps: float) -> GradcheckReport:
    worst_entry = max(entries, key=lambda e: e.max_rel_error, default=None)
    max_err = worst_entry.max_rel_error if worst_entry else 0.0
    return GradcheckReport(
        passed=bool(max_err <= tol),
        tol=tol,
        eps=eps,
        max_rel_error=max_err,
        worst=worst_entry.name if worst_entry else None,
        entries=entries,
    )


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckReport:
    """
    Compare autodiff against central differences for a scalar function of one tensor.

    Args:
        f: Deterministic scalar-valued function
        x: Point at which to check; converted to 64-bit if needed
        eps: Finite-difference step
        tol: Maximum accepted relative error
        max_elements: Check a random subset of this many elements (all when None)
        rng: Generator for the subset

    Returns:
        GradcheckReport with the worst element's location
    """
    if x.dtype != np.float64:
        logger.warning("gradcheck input is %s; converting to float64", x.dtype)
    point = Tensor(x.data.astype(np.float64), requires_grad=True)
    out = f(point)
    if out.requires_grad:
        out.backward()
    entry = _check_tensor("input", lambda: f(point), point, eps, max_elements, rng or np.random.default_rng(0))
    return _summarize([entry], tol, eps)


def gradcheck_params(
    loss_fn: Callable[[], Tensor],
    params: Iterable[tuple[str, Tensor]],
    eps: float = 1e-5,
    tol: float = 1e-3,
    max_elements: Optional[int] = 8,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckReport:
    """
    Check the gradient of a scalar loss with respect to named 64-bit tensors.

    ``params`` yields (name, tensor) pairs, e.g. ``ParamStore.items()``; each tensor is
    perturbed in place and restored. The report has one entry per tensor.
    """
    params = list(params)
    for name, tensor in params:
        if tensor.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters; '{name}' is {tensor.dtype}")
        tensor.zero_grad()
    loss = loss_fn()
    loss.backward()
    rng = rng or np.random.default_rng(0)
    entries = []
    for name, tensor in params:
        entry = _check_tensor(name, loss_fn, tensor, eps, max_elements, rng)
        logger.debug("gradcheck %s: max rel err %.3e over %d elements", name, entry.max_rel_error, entry.checked)
        entries.append(entry)
    return _summarize(entries, tol, eps)
