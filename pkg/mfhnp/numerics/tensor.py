"""Dense float64 tensors and a reverse-mode differentiation tape.

Ops record onto the tape that is active in the current thread, but only
when at least one input is already on that tape (a watched leaf or the
result of a recorded op). Everything else is plain numpy evaluation.

    with Tape() as tape:
        tape.watch_all(params)
        loss = ...
    grads = backward(loss)
"""

import logging
import threading

import numpy as np

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from ..exceptions import DomainError, NonFiniteError, ShapeError, TapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
Vjp = Callable[[np.ndarray], np.ndarray]

__all__ = [
    "Tensor",
    "Tape",
    "active_tape",
    "as_tensor",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negative",
    "square",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "sigmoid_values",
    "tanh",
    "relu",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "broadcast_to",
    "concatenate",
    "take",
    "columns",
    "backward",
    "finite_difference_gradient",
]

_THREAD_STATE = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_THREAD_STATE, "stack", None)
    if stack is None:
        stack = []
        _THREAD_STATE.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape entered in this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array, optionally tied to a node of a tape.

    Tensors hash and compare by identity so they can key gradient maps.
    """

    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: Optional["Tape"] = None, node: Optional[int] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __repr__(self) -> str:
        tracked = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({self.value!r}{tracked})"

    def __len__(self) -> int:
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of differentiable ops.

    Each node stores the indices of its tracked parents together with one
    vector-Jacobian product per parent. Leaves are tensors registered with
    `watch`; they are released from the tape when the context exits, while
    recorded results keep their node so `backward` may run afterwards.
    """

    def __init__(self):
        self.parents: List[Tuple[int, ...]] = []
        self.vjps: List[Tuple[Vjp, ...]] = []
        self.leaves: List[Tensor] = []
        self.leaf_nodes: List[int] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        for leaf in self.leaves:
            if leaf.tape is self:
                leaf.tape = None
                leaf.node = None

    def __len__(self) -> int:
        return len(self.parents)

    def record(self, parents: Tuple[int, ...], vjps: Tuple[Vjp, ...]) -> int:
        self.parents.append(parents)
        self.vjps.append(vjps)
        return len(self.parents) - 1

    def watch(self, tensor: Tensor) -> Tensor:
        """Register a leaf whose gradient `backward` will report."""
        if tensor.tape is self:
            return tensor
        if tensor.tape is not None and tensor.tape in _tape_stack():
            raise TapeError("tensor is already watched by an enclosing tape")
        tensor.tape = self
        tensor.node = self.record((), ())
        self.leaves.append(tensor)
        self.leaf_nodes.append(tensor.node)
        return tensor

    def watch_all(self, tensors: Iterable[Tensor]) -> List[Tensor]:
        return [self.watch(t) for t in tensors]


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _result(op: str, value: np.ndarray, inputs: Sequence[Tensor], vjps: Sequence[Vjp]) -> Tensor:
    _check_finite(value, op)
    tape = active_tape()
    if tape is None:
        return Tensor(value)
    parents = []
    tracked = []
    for tensor, vjp in zip(inputs, vjps):
        if tensor.tape is None:
            continue
        if tensor.tape is not tape:
            raise TapeError(f"{op}: input is recorded on a different tape")
        parents.append(tensor.node)
        tracked.append(vjp)
    if not parents:
        return Tensor(value)
    return Tensor(value, tape, tape.record(tuple(parents), tuple(tracked)))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_pair(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair("add", a, b)
    return _result(
        "add",
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def subtract(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair("subtract", a, b)
    return _result(
        "subtract",
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def multiply(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair("multiply", a, b)
    return _result(
        "multiply",
        a.value * b.value,
        (a, b),
        (lambda g: _unbroadcast(g * b.value, a.shape), lambda g: _unbroadcast(g * a.value, b.shape)),
    )


def divide(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair("divide", a, b)
    if np.any(b.value == 0.0):
        raise DomainError("divide: division by zero")
    return _result(
        "divide",
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        ),
    )


def negative(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result("negative", -a.value, (a,), (lambda g: -g,))


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result("square", a.value * a.value, (a,), (lambda g: 2.0 * g * a.value,))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _result("matmul", a.value @ b.value, (a, b), (lambda g: g @ b.value.T, lambda g: a.value.T @ g))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _result("exp", out, (a,), (lambda g: g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("log: argument must be strictly positive")
    return _result("log", np.log(a.value), (a,), (lambda g: g / a.value,))


def sqrt(a: ArrayLike) -> Tensor:
    """Square root of a non-negative tensor.

    sqrt(0) evaluates fine, but its derivative is unbounded: a backward pass
    that sends a non-zero gradient into a zero entry raises DomainError.
    Entries whose upstream gradient is exactly zero contribute nothing.
    """
    a = as_tensor(a)
    if np.any(a.value < 0.0):
        raise DomainError("sqrt: argument must be non-negative")
    out = np.sqrt(a.value)
    zero = out == 0.0
    safe = np.where(zero, 1.0, out)

    def vjp(g):
        g = np.broadcast_to(g, out.shape)
        if np.any(zero & (g != 0.0)):
            raise DomainError("sqrt: gradient is unbounded at 0")
        return np.where(zero, 0.0, 0.5 * g / safe)

    return _result("sqrt", out, (a,), (vjp,))


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(a: ArrayLike) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    out = np.maximum(a.value, 0.0) + np.log1p(np.exp(-np.abs(a.value)))
    return _result("softplus", out, (a,), (lambda g: g * sigmoid_values(a.value),))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _result("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0.0
    return _result("relu", np.where(mask, a.value, 0.0), (a,), (lambda g: g * mask,))


def reduce_sum(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _result("reduce_sum", out, (a,), (vjp,))


def reduce_mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("reduce_mean: empty reduction")
    return divide(reduce_sum(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    return _result("reshape", out, (a,), (lambda g: g.reshape(a.shape),))


def broadcast_to(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.value, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    return _result("broadcast_to", out, (a,), (lambda g: _unbroadcast(g, a.shape),))


def concatenate(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concatenate: nothing to concatenate")
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concatenate: {e}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def piece(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _result("concatenate", out, tensors, [piece(i) for i in range(len(tensors))])


def take(a: ArrayLike, indices: Sequence[int]) -> Tensor:
    """Gather rows (axis 0) of `a`."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, indices, g)
        return grad

    return _result("take", a.value[indices], (a,), (vjp,))


def columns(a: ArrayLike, start: int, stop: int) -> Tensor:
    """Slice `a[..., start:stop]`."""
    a = as_tensor(a)
    if not 0 <= start <= stop <= a.shape[-1]:
        raise ShapeError(f"columns: [{start}:{stop}] outside last axis of width {a.shape[-1]}")

    def vjp(g):
        grad = np.zeros(a.shape)
        grad[..., start:stop] = g
        return grad

    return _result("columns", a.value[..., start:stop].copy(), (a,), (vjp,))


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """Gradients of a scalar-shaped `loss` with respect to every watched leaf.

    Leaves the loss does not depend on get zeros. A tape supports a single
    backward pass.
    """
    if loss.size != 1:
        raise TapeError(f"backward: loss must hold a single value, got shape {loss.shape}")
    tape = loss.tape
    if tape is None or loss.node is None:
        raise TapeError("backward: loss is not recorded on a tape")
    if tape.consumed:
        raise TapeError("backward: tape already consumed")
    tape.consumed = True

    grads: List[Optional[np.ndarray]] = [None] * (loss.node + 1)
    grads[loss.node] = np.ones_like(loss.value)
    for index in range(loss.node, -1, -1):
        g = grads[index]
        if g is None:
            continue
        for parent, vjp in zip(tape.parents[index], tape.vjps[index]):
            contribution = vjp(g)
            grads[parent] = contribution if grads[parent] is None else grads[parent] + contribution

    result = {}
    for leaf, node in zip(tape.leaves, tape.leaf_nodes):
        g = grads[node] if node <= loss.node else None
        result[leaf] = np.zeros(leaf.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    logging.debug(f"backward pass over {loss.node + 1} nodes for {len(tape.leaves)} leaves")
    tape.parents = []
    tape.vjps = []
    return result


def finite_difference_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = fn(x)
        flat[i] = original - step
        lower = fn(x)
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * step)
    return grad
