"""Reverse-mode automatic differentiation over dense numpy arrays."""

import logging
from contextlib import contextmanager
from typing import Any, Callable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Operands of an op have incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        listed = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf while anomaly detection was on."""

    def __init__(self, op: str, phase: str = "forward"):
        self.op = op
        self.phase = phase
        super().__init__(f"non-finite value produced by '{op}' during {phase}")


_DTYPES = {"float32": np.float32, "float64": np.float64}

_state = {
    "dtype": np.float32,
    "grad_enabled": True,
    "anomaly": False,
}


def get_default_dtype() -> type:
    return _state["dtype"]


def set_default_dtype(name: str) -> None:
    """Select the run-wide precision ("float32" or "float64")."""
    if name not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)} (got: {name})")
    _state["dtype"] = _DTYPES[name]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default dtype."""
    previous = _state["dtype"]
    set_default_dtype(name)
    try:
        yield
    finally:
        _state["dtype"] = previous


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


@contextmanager
def detect_anomaly() -> Iterator[None]:
    """Raise NonFiniteError at the first op whose output or gradient is not finite."""
    previous = _state["anomaly"]
    _state["anomaly"] = True
    try:
        yield
    finally:
        _state["anomaly"] = previous


# Signature: grad_out -> one gradient (or None) per parent
BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An n-dimensional float array with optional gradient tracking.

    Tensors produced by ops remember their parents and a backward closure;
    calling ``backward()`` on a scalar walks that graph in reverse
    topological order and accumulates into ``.grad`` of every leaf that
    requires grad.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: type | None = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"

    # --- introspection ---

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # --- graph ---

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate dSelf/dLeaf into every reachable leaf's ``.grad``.

        Gradients accumulate across calls; call ``zero_grad`` on the leaves
        (or the optimizer) between steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() needs a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError("backward", self.shape, grad.shape)

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if _state["anomaly"] and not np.all(np.isfinite(pg)):
                    raise NonFiniteError(node._op, phase="backward")
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # --- operator sugar; implementations live in ops ---

    def __add__(self, other): return _ops().add(self, other)
    def __radd__(self, other): return _ops().add(other, self)
    def __sub__(self, other): return _ops().sub(self, other)
    def __rsub__(self, other): return _ops().sub(other, self)
    def __mul__(self, other): return _ops().mul(self, other)
    def __rmul__(self, other): return _ops().mul(other, self)
    def __truediv__(self, other): return _ops().div(self, other)
    def __rtruediv__(self, other): return _ops().div(other, self)
    def __neg__(self): return _ops().neg(self)
    def __pow__(self, exponent: float): return _ops().power(self, exponent)
    def __matmul__(self, other): return _ops().matmul(self, other)
    def __rmatmul__(self, other): return _ops().matmul(other, self)
    def __getitem__(self, index): return _ops().index(self, index)

    def sum(self, axis=None, keepdims: bool = False): return _ops().sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return _ops().mean(self, axis, keepdims)
    def reshape(self, *shape): return _ops().reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return _ops().transpose(self, axes[0] if len(axes) == 1 else axes)
    def relu(self): return _ops().relu(self)
    def tanh(self): return _ops().tanh(self)
    def sigmoid(self): return _ops().sigmoid(self)
    def exp(self): return _ops().exp(self)
    def log(self): return _ops().log(self)
    def abs(self): return _ops().absolute(self)
    def sqrt(self): return _ops().sqrt(self)
    def clamp(self, lo=None, hi=None): return _ops().clamp(self, lo, hi)


def _ops():
    from . import ops
    return ops


def as_tensor(value: Any) -> Tensor:
    """Wrap arrays and scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardFn,
    op: str,
) -> Tensor:
    """Build an op output and, when recording, link it into the graph."""
    out = Tensor(data, dtype=data.dtype)
    if _state["anomaly"] and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(op)
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative DFS; parents precede children, every node appears once."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def parameter(data: Any, dtype: type | None = None) -> Tensor:
    """A trainable leaf."""
    return Tensor(data, requires_grad=True, dtype=dtype)
