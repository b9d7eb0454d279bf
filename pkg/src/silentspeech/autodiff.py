"""Dense float64 tensors with reverse-mode automatic differentiation.

Small numpy-backed engine: a :class:`Tensor` wraps an immutable float64
array and remembers how it was produced; :func:`grad` replays the recorded
operations in reverse to accumulate adjoints. Central finite differences
(:func:`finite_difference_gradient`) serve as the independent check.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "DimensionError",
    "NonScalarOutputError",
    "as_tensor",
    "concat",
    "stack",
    "logsumexp",
    "log_softmax",
    "gelu",
    "cosine_similarity",
    "grad",
    "finite_difference_gradient",
]

COSINE_EPS = 1e-8

# tanh-form GeLU constant sqrt(2/pi)
_GELU_C = math.sqrt(2.0 / math.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonScalarOutputError(ValueError):
    """A scalar-valued function was expected but returned a non-scalar."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


class Tensor:
    """Immutable float64 array node in a computation graph.

    ``_parents`` and ``_grad_fn`` record the producing operation;
    ``_grad_fn(out_grad)`` returns one gradient array per parent (or None
    for parents that do not require gradients).
    """

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _grad_fn: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.data = _freeze(np.asarray(data))
        self.requires_grad = bool(requires_grad)
        self._parents = _parents if self.requires_grad else ()
        self._grad_fn = _grad_fn if self.requires_grad else None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise NonScalarOutputError(f"expected a scalar, got shape {self.shape}")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    # -- graph construction helpers ------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], grad_fn) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=needs, _parents=parents, _grad_fn=grad_fn)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)
        out = a.data + b.data

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(out, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)
        out = a.data - b.data

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(out, (a, b), backward)

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g):
            return (-g,)

        return Tensor._make(-a.data, (a,), backward)

    def __mul__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)
        out = a.data * b.data

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

        return Tensor._make(out, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)
        out = a.data / b.data

        def backward(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        return Tensor._make(out, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a, p = self, float(exponent)
        out = a.data**p

        def backward(g):
            return (g * p * a.data ** (p - 1.0),)

        return Tensor._make(out, (a,), backward)

    def __matmul__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError("matmul expects two 2-D tensors")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not align")
        out = a.data @ b.data

        def backward(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._make(out, (a, b), backward)

    # -- elementwise functions ---------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)

        def backward(g):
            return (g * out,)

        return Tensor._make(out, (a,), backward)

    def log(self) -> "Tensor":
        a = self
        out = np.log(a.data)

        def backward(g):
            return (g / a.data,)

        return Tensor._make(out, (a,), backward)

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)

        def backward(g):
            return (g * (1.0 - out * out),)

        return Tensor._make(out, (a,), backward)

    def sqrt(self) -> "Tensor":
        a = self
        out = np.sqrt(a.data)

        def backward(g):
            return (g * 0.5 / out,)

        return Tensor._make(out, (a,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(out, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # -- shape manipulation ------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out = a.data.reshape(shape)

        def backward(g):
            return (g.reshape(a.shape),)

        return Tensor._make(out, (a,), backward)

    @property
    def T(self) -> "Tensor":
        a = self
        out = a.data.T

        def backward(g):
            return (g.T,)

        return Tensor._make(out, (a,), backward)

    def __getitem__(self, idx) -> "Tensor":
        a = self
        out = a.data[idx]

        def backward(g):
            ga = np.zeros(a.shape)
            np.add.at(ga, idx, g)
            return (ga,)

        return Tensor._make(np.array(out), (a,), backward)


def as_tensor(value, requires_grad: bool = False) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    g = np.asarray(grad)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(out, tensors, backward)


def logsumexp(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp.

    The subtracted maximum is treated as a constant, which leaves the
    gradient exact (softmax of the inputs).
    """
    t = as_tensor(t)
    m = np.max(t.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf slices stay finite
    shifted = t - Tensor(m)
    out = shifted.exp().sum(axis=axis, keepdims=True).log() + Tensor(m)
    if not keepdims and axis is not None:
        newshape = list(out.shape)
        del newshape[axis]
        out = out.reshape(tuple(newshape))
    elif not keepdims and axis is None:
        out = out.reshape(())
    return out


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    return t - logsumexp(t, axis=axis, keepdims=True)


def gelu(t: Tensor) -> Tensor:
    """Gaussian-error linear unit, tanh approximation."""
    t = as_tensor(t)
    inner = (t + (t * t * t) * 0.044715) * _GELU_C
    return t * 0.5 * (inner.tanh() + 1.0)


def cosine_similarity(a, b, eps: float = COSINE_EPS) -> Tensor:
    """cos(a, b) = a.b / (|a||b| + eps) for 1-D vectors of equal length."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError("cosine_similarity expects 1-D vectors")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 1:
        raise DimensionError("vectors must have length >= 1")
    dot = (a * b).sum()
    na = (a * a).sum().sqrt()
    nb = (b * b).sum().sqrt()
    return dot / (na * nb + eps)


class GradientTape:
    """Topologically ordered record of the operations reaching one output.

    Constructed from the output tensor; :meth:`backward` walks the record
    once in reverse, accumulating one adjoint buffer per node.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        self._adjoints: dict[int, np.ndarray] = {}
        # Iterative post-order DFS; insertion order is a topological order.
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for parent in reversed(node._parents):
                stack_.append((parent, False))

    def backward(self, seed: np.ndarray | float = 1.0) -> None:
        adj = self._adjoints
        adj.clear()
        adj[id(self.root)] = np.broadcast_to(
            np.asarray(seed, dtype=np.float64), self.root.shape
        ).copy()
        for node in reversed(self.nodes):
            out_grad = adj.get(id(node))
            if out_grad is None or node._grad_fn is None:
                continue
            parent_grads = node._grad_fn(out_grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g, dtype=np.float64).reshape(parent.shape)
                if id(parent) in adj:
                    adj[id(parent)] = adj[id(parent)] + g
                else:
                    adj[id(parent)] = g

    def gradient(self, tensor: Tensor) -> np.ndarray:
        g = self._adjoints.get(id(tensor))
        if g is None:
            return np.zeros(tensor.shape)
        return g


def grad(f: Callable, inputs) -> Tensor | list[Tensor]:
    """Gradients of a scalar-valued function at the given inputs.

    ``inputs`` may be a single tensor/array or a sequence; the return
    mirrors that structure. Raises :class:`NonScalarOutputError` if ``f``
    does not produce a scalar.
    """
    single = isinstance(inputs, (Tensor, np.ndarray, float, int)) or (
        isinstance(inputs, (list, tuple)) and inputs and np.isscalar(inputs[0])
    )
    seq = [inputs] if single else list(inputs)
    leaves = [Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True) for x in seq]
    out = f(*leaves)
    out = as_tensor(out)
    if out.size != 1:
        raise NonScalarOutputError(f"grad requires a scalar output, got shape {out.shape}")
    tape = GradientTape(out)
    tape.backward()
    grads = [Tensor(tape.gradient(leaf)) for leaf in leaves]
    return grads[0] if single else grads


def finite_difference_gradient(f: Callable, x, h: float = 1e-5) -> Tensor:
    """Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = x0.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        fp = as_tensor(f(Tensor(bumped.reshape(x0.shape)))).item()
        bumped[i] = flat[i] - h
        fm = as_tensor(f(Tensor(bumped.reshape(x0.shape)))).item()
        out[i] = (fp - fm) / (2.0 * h)
    return Tensor(out.reshape(x0.shape))
