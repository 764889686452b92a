"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every primitive records a backward closure on the tensor it
produces, and ``backward`` on a scalar loss topologically sorts the reachable
subgraph and replays adjoints in reverse. numpy supplies storage and BLAS
kernels only; no autograd facility of any library is used.

All data is float64. Gradient checks at lower precision are unreliable.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "no_grad",
    "backward",
    "matmul",
    "relu",
    "square",
    "sin",
    "cos",
    "exp",
    "pow_scalar",
    "softmax_lastdim",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "concat",
    "slice_axis",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block. Frozen paths use this."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus the bookkeeping reverse mode needs.

    ``grad`` is populated by ``backward`` for every tensor on the tape that
    has ``requires_grad`` set. Tensors are value-like: ops never mutate their
    inputs' ``data``. The only sanctioned in-place mutation is an optimizer
    updating leaf parameters between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; every dunder routes through a module-level primitive
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _scalar_err(t: Tensor):
    raise ShapeError(f"item() requires a single-element tensor, got shape {t.data.shape}")


class Tape:
    """Topologically ordered slice of the graph that ends at one root.

    Built lazily by ``backward``; each node's parents precede it. A tape is
    single-use: ``release`` drops parent references and closures so the graph
    is garbage-collected and cannot be replayed by accident.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(nodes)

    def release(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")
    tape = Tape.from_root(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None:
            node._backward()
    tape.release()


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _accumulate(parent: Tensor, grad: np.ndarray) -> None:
    # first touch allocates an owned buffer; later contributions add in place
    if parent.grad is None:
        parent.grad = np.zeros_like(parent.data)
    parent.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad


def _broadcast_data(a: Tensor, b: Tensor, op) -> np.ndarray:
    try:
        return op(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(
            f"cannot broadcast shapes {a.data.shape} and {b.data.shape}"
        ) from exc


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _node(_broadcast_data(a, b, np.add), (a, b))
    if out.requires_grad:
        def bw():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = bw
    return out


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _node(_broadcast_data(a, b, np.subtract), (a, b))
    if out.requires_grad:
        def bw():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-out.grad, b.data.shape))
        out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _node(_broadcast_data(a, b, np.multiply), (a, b))
    if out.requires_grad:
        def bw():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = bw
    return out


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _node(_broadcast_data(a, b, np.divide), (a, b))
    if out.requires_grad:
        def bw():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
            if b.requires_grad:
                gb = -out.grad * a.data / (b.data * b.data)
                _accumulate(b, _unbroadcast(gb, b.data.shape))
        out._backward = bw
    return out


def neg(a) -> Tensor:
    a = _coerce(a)
    out = _node(-a.data, (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, -out.grad)
        out._backward = bw
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch dimensions broadcast as in numpy."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.data.shape} vs {b.data.shape}")
    out = _node(a.data @ b.data, (a, b))
    if out.requires_grad:
        def bw():
            g = out.grad
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                _accumulate(a, _unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                _accumulate(b, _unbroadcast(gb, b.data.shape))
        out._backward = bw
    return out


def relu(a) -> Tensor:
    a = _coerce(a)
    out = _node(np.maximum(a.data, 0.0), (a,))
    if out.requires_grad:
        mask = a.data > 0.0
        def bw():
            _accumulate(a, out.grad * mask)
        out._backward = bw
    return out


def square(a) -> Tensor:
    a = _coerce(a)
    out = _node(a.data * a.data, (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, 2.0 * a.data * out.grad)
        out._backward = bw
    return out


def sin(a) -> Tensor:
    a = _coerce(a)
    out = _node(np.sin(a.data), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, np.cos(a.data) * out.grad)
        out._backward = bw
    return out


def cos(a) -> Tensor:
    a = _coerce(a)
    out = _node(np.cos(a.data), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, -np.sin(a.data) * out.grad)
        out._backward = bw
    return out


def exp(a) -> Tensor:
    a = _coerce(a)
    out = _node(np.exp(a.data), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.data * out.grad)
        out._backward = bw
    return out


def pow_scalar(a, exponent: float) -> Tensor:
    """a ** exponent for a python scalar exponent.

    The derivative uses a**(exponent-1); negative bases with fractional
    exponents are the caller's contract violation, as in numpy.
    """
    a = _coerce(a)
    e = float(exponent)
    out = _node(a.data ** e, (a,))
    if out.requires_grad:
        def bw():
            if e == 0.0:
                return
            _accumulate(a, e * a.data ** (e - 1.0) * out.grad)
        out._backward = bw
    return out


def softmax_lastdim(a) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction.

    The max shift is piecewise constant so it carries no gradient; backward
    applies the exact softmax Jacobian s * (g - sum(g * s)).
    """
    a = _coerce(a)
    if a.data.shape[-1] < 1:
        raise ShapeError("softmax_lastdim requires a non-empty last axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    numer = np.exp(shifted)
    soft = numer / numer.sum(axis=-1, keepdims=True)
    out = _node(soft, (a,))
    if out.requires_grad:
        def bw():
            g = out.grad
            inner = (g * soft).sum(axis=-1, keepdims=True)
            _accumulate(a, soft * (g - inner))
        out._backward = bw
    return out


def _restore_axes(grad: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    if axis is None or keepdims:
        return grad
    return np.expand_dims(grad, axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def bw():
            g = _restore_axes(out.grad, axis, keepdims)
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        out._backward = bw
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = _node(a.data.mean(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        count = a.data.size if axis is None else (
            np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
        )
        scale = 1.0 / float(count)
        def bw():
            g = _restore_axes(out.grad, axis, keepdims)
            _accumulate(a, np.broadcast_to(g * scale, a.data.shape))
        out._backward = bw
    return out


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = _node(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad.reshape(a.data.shape))
        out._backward = bw
    return out


def transpose(a, axes=None) -> Tensor:
    a = _coerce(a)
    out = _node(a.data.transpose(axes), (a,))
    if out.requires_grad:
        inverse = None if axes is None else tuple(np.argsort(axes))
        def bw():
            _accumulate(a, out.grad.transpose(inverse))
        out._backward = bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    if not parts:
        raise ShapeError("concat requires at least one tensor")
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    if out.requires_grad:
        extents = [p.data.shape[axis] for p in parts]
        def bw():
            offset = 0
            for part, extent in zip(parts, extents):
                if part.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(offset, offset + extent)
                    _accumulate(part, out.grad[tuple(index)])
                offset += extent
        out._backward = bw
    return out


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _coerce(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = _node(a.data[index], (a,))
    if out.requires_grad:
        def bw():
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[index] += out.grad
        out._backward = bw
    return out
