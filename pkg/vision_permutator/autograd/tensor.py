"""
Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a row-major numpy array. Every differentiable operation records its
inputs and a closure mapping the output gradient to input gradients; ``backward``
replays those records in reverse topological order (the tape) and sums the
gradient contributions of all consumers of a node.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy import special

from vision_permutator.models.errors import ConfigError, GradientError, ShapeError

DEFAULT_DTYPE = np.float32
SUPPORTED_DTYPES = (np.float32, np.float64)

# Fixed row-block size: the partition never depends on the worker count, so
# products are bit-identical for any pool size.
MATMUL_BLOCK_ROWS = 256

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_grad_enabled = True
_num_workers: Optional[int] = None
_executor: Optional[ThreadPoolExecutor] = None


def get_num_workers() -> int:
    """Return the matmul worker count (``VIP_NUM_WORKERS``, default 1)."""
    global _num_workers
    if _num_workers is None:
        raw = os.environ.get("VIP_NUM_WORKERS", "1")
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigError(f"expected an integer, got {raw!r}", field="VIP_NUM_WORKERS") from e
        if value < 1:
            raise ConfigError("must be at least 1", field="VIP_NUM_WORKERS")
        _num_workers = value
    return _num_workers


def set_num_workers(count: int) -> None:
    """Pin the number of threads used to partition matmul rows."""
    global _num_workers, _executor
    if count < 1:
        raise ValueError(f"worker count must be at least 1, got {count}")
    if _executor is not None:
        _executor.shutdown(wait=True)
        _executor = None
    _num_workers = count


def _get_executor() -> ThreadPoolExecutor:
    global _executor
    if _executor is None:
        _executor = ThreadPoolExecutor(max_workers=get_num_workers(), thread_name_prefix="vip-matmul")
    return _executor


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def _resolve_dtype(data, dtype) -> np.dtype:
    if dtype is not None:
        resolved = np.dtype(dtype)
    elif isinstance(data, (np.ndarray, np.generic)) and data.dtype in SUPPORTED_DTYPES:
        resolved = data.dtype
    else:
        resolved = np.dtype(DEFAULT_DTYPE)
    if resolved not in SUPPORTED_DTYPES:
        raise TypeError(f"unsupported tensor dtype {resolved}; use float32 or float64")
    return resolved


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype=None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        _op: str = "",
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.require(np.asarray(data, dtype=_resolve_dtype(data, dtype)), requirements="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- properties -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError("item: tensor has more than one element", self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        """Leaf copy in another precision, keeping the grad flag."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- autodiff ---------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Populate ``grad`` on every leaf that requires it.

        Raises:
            GradientError: If the tensor is not a tracked scalar.
        """
        if not self.requires_grad:
            raise GradientError("backward called on a tensor that is detached from any graph")
        if grad is None:
            if self.size != 1:
                raise GradientError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        Tape.record(self).run(self, np.asarray(grad, dtype=self.dtype))

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, reciprocal(_lift(other, self)))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axes, keepdims)


@dataclass
class TapeRecord:
    """One recorded operation: output node, its inputs and the gradient closure."""

    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


class Tape:
    """Topologically ordered operations that produced a tensor."""

    def __init__(self, records: list[TapeRecord]):
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        """Collect the operations reachable from ``root``, inputs before consumers."""
        order: list[TapeRecord] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(TapeRecord(node, node._parents, node._backward, node._op))
                continue
            if node.is_leaf or id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if not parent.is_leaf and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run(self, root: Tensor, seed: np.ndarray) -> None:
        """Propagate ``seed`` from ``root`` back to the leaves, visiting each node once."""
        if root.is_leaf:
            _accumulate(root, seed)
            return
        pending: dict[int, np.ndarray] = {id(root): seed}
        for rec in reversed(self.records):
            upstream = pending.pop(id(rec.output), None)
            if upstream is None:
                continue
            for inp, g in zip(rec.inputs, rec.backward(upstream)):
                if g is None or not inp.requires_grad:
                    continue
                g = np.asarray(g)
                if inp.is_leaf:
                    _accumulate(inp, g)
                elif id(inp) in pending:
                    pending[id(inp)] = pending[id(inp)] + g
                else:
                    pending[id(inp)] = g


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)


def _lift(value: ArrayLike, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the axes that broadcasting expanded so ``grad`` matches ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes are not broadcastable", a.shape, b.shape) from e


# -- matmul ---------------------------------------------------------------


def _blocked_matmul(a2: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-blocked ``a2 @ b`` for a 2-D left operand."""
    rows = a2.shape[0]
    out = np.empty((rows, b.shape[1]), dtype=np.result_type(a2, b))

    def run(start: int) -> None:
        stop = min(start + MATMUL_BLOCK_ROWS, rows)
        np.matmul(a2[start:stop], b, out=out[start:stop])

    starts = range(0, rows, MATMUL_BLOCK_ROWS)
    if get_num_workers() == 1 or rows <= MATMUL_BLOCK_ROWS:
        for start in starts:
            run(start)
    else:
        list(_get_executor().map(run, starts))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched product of ``a [..., m, k]`` with a matrix ``b [k, n]``."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul: inner extents differ", a.shape, b.shape)
    k, n = b.shape
    a2 = a.data.reshape(-1, k)
    out = _blocked_matmul(a2, b.data).reshape(a.shape[:-1] + (n,))

    def backward(g):
        g2 = g.reshape(-1, n)
        da = _blocked_matmul(g2, b.data.T).reshape(a.shape) if a.requires_grad else None
        db = a2.T @ g2 if b.requires_grad else None
        return da, db

    return _make(out, (a, b), backward, "matmul")


# -- data movement --------------------------------------------------------


def reshape(x: Tensor, new_shape: Sequence[int]) -> Tensor:
    """Same row-major data under a new shape."""
    new_shape = tuple(int(s) for s in new_shape)
    if math.prod(new_shape) != x.size or any(s < 0 for s in new_shape):
        raise ShapeError("reshape: element count mismatch", x.shape, new_shape)
    out = x.data.reshape(new_shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Reorder axes and materialize the result contiguously."""
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of the axes", x.shape)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _make(out, (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),), "permute")


def select(x: Tensor, axis: int, index: int) -> Tensor:
    """Take one index along ``axis``, dropping that axis."""
    if not -x.ndim <= axis < x.ndim or not 0 <= index < x.shape[axis]:
        raise ShapeError(f"select: index {index} on axis {axis} out of range", x.shape)
    axis = axis % x.ndim
    out = np.require(np.take(x.data, index, axis=axis), requirements="C")

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        full[tuple(slicer)] = g
        return (full,)

    return _make(out, (x,), backward, "select")


# -- elementwise ----------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_broadcast("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_broadcast("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_broadcast("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(x: Tensor, factor: float) -> Tensor:
    c = x.dtype.type(factor)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def _erf_grad(x: np.ndarray) -> np.ndarray:
    """d/dx erf(x) = 2/sqrt(pi) * exp(-x^2)."""
    return (2.0 / math.sqrt(math.pi)) * np.exp(-np.square(x))


def erf(x: Tensor) -> Tensor:
    out = special.erf(x.data).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * _erf_grad(x.data).astype(x.dtype, copy=False),), "erf")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * (0.5 / out),), "sqrt")


def reciprocal(x: Tensor) -> Tensor:
    out = 1.0 / x.data
    return _make(out, (x,), lambda g: (-g * out * out,), "reciprocal")


# -- reductions -----------------------------------------------------------


def _normalize_axes(x: Tensor, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -x.ndim <= axis < x.ndim:
            raise ShapeError(f"reduce: axis {axis} out of range", x.shape)
        normalized.append(axis % x.ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"reduce: duplicate axes {tuple(axes)}", x.shape)
    return tuple(sorted(normalized))


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...]) -> np.ndarray:
    """Broadcast a reduction's gradient back over ``shape``; ``g`` may arrive squeezed or keepdims-shaped."""
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return np.broadcast_to(np.reshape(g, kept), shape)


def sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axes(x, axes)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)
    return _make(
        np.asarray(out, dtype=x.dtype),
        (x,),
        lambda g: (_expand_reduced(g, x.shape, axes).copy(),),
        "sum",
    )


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(x, axes)
    count = math.prod(x.shape[a] for a in axes)
    out = np.mean(x.data, axis=axes, keepdims=keepdims)
    inv = x.dtype.type(1.0 / count)
    return _make(
        np.asarray(out, dtype=x.dtype),
        (x,),
        lambda g: (_expand_reduced(g * inv, x.shape, axes).copy(),),
        "mean",
    )


def amax_const(x: Tensor, axis: int) -> Tensor:
    """Untracked maximum along ``axis`` with kept dims, used as a stabilizing shift."""
    return Tensor(np.max(x.data, axis=axis, keepdims=True))
