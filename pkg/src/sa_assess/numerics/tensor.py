"""A small reverse-mode autodiff tensor on top of numpy.

Each op builds its output eagerly and records a closure that maps the
output gradient to input gradients. ``Tensor.backward`` walks the graph in
reverse topological order. Only the ops the two models need are provided.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NonFiniteError

DEFAULT_DTYPE = np.float64


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense array with an optional gradient and a link to the op that made it."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    # -- graph construction ----------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node._op}")
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)),
            "div",
        )

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def __pow__(self, exponent: float) -> Tensor:
        a = self.data
        return Tensor._make(
            a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),), "pow"
        )

    # -- reductions and reshaping ------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose"
        )

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    # -- elementwise functions ----------------------------------------------
    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> Tensor:
        a = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a)
        return Tensor._make(out, (self,), lambda g: (g / a,), "log")

    def clip(self, lo: float, hi: float) -> Tensor:
        a = self.data
        inside = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,), "clip")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        gb = unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return Tensor._make(x @ y, (a, b), back, "matmul")


# Activation backward rules live at module level so verification tooling can
# swap one out and confirm the gradient checker notices.
def _relu_backward(g: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return g * (x > 0)


def _sigmoid_backward(g: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return g * y * (1.0 - y)


def _softmax_backward(g: np.ndarray, y: np.ndarray, axis: int) -> np.ndarray:
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


# Optional observers of ReLU inputs; gradient checks use this to steer clear
# of the kink where finite differences are meaningless.
_relu_observers: list[Callable[[np.ndarray], None]] = []


class observe_relu_inputs:
    """Context manager collecting the smallest |input| seen by any ReLU."""

    def __enter__(self):
        self.min_abs = np.inf
        _relu_observers.append(self._see)
        return self

    def _see(self, x: np.ndarray) -> None:
        if x.size:
            self.min_abs = min(self.min_abs, float(np.abs(x).min()))

    def __exit__(self, *exc):
        _relu_observers.remove(self._see)
        return False


def relu(x: Tensor) -> Tensor:
    xd = x.data
    for obs in _relu_observers:
        obs(xd)
    y = np.maximum(xd, 0.0)
    return Tensor._make(y, (x,), lambda g: (_relu_backward(g, xd, y),), "relu")


def stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = stable_sigmoid(xd)
    return Tensor._make(y, (x,), lambda g: (_sigmoid_backward(g, xd, y),), "sigmoid")


def stable_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = stable_softmax(x.data, axis)
    return Tensor._make(y, (x,), lambda g: (_softmax_backward(g, y, axis),), "softmax")
