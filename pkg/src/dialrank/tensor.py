"""float64 tensors with reverse-mode automatic differentiation.

The compute graph is implicit: every operation wires its output tensor to
its input tensors and keeps a closure that routes the output gradient back
to them. ``Tensor.backward`` topologically sorts the reachable subgraph and
visits each node exactly once, accumulating gradients with ``+=`` whenever
a value feeds several consumers.

All storage is row-major float64 and reductions use numpy's fixed
summation order, so forward results are bit-reproducible across runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "concat",
    "narrow",
    "reshape",
    "transpose",
    "gather",
    "tensor_sum",
    "tanh",
    "sigmoid",
    "sqrt",
    "softmax",
    "logsumexp",
    "power_norm",
    "clip_min",
    "normalize_power_l2",
]

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` stays ``None`` until a backward pass deposits into it; it then
    has exactly the shape of ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def _accumulate_at(self, key, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[key] += g

    def backward(self):
        """Backpropagate from this scalar through every recorded ancestor."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError(
                "backward on a detached graph: no input of this value tracks gradients"
            )
        # Iterative postorder so deep LSTM chains cannot hit the recursion limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -----------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose_2d(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=True)
    out._parents = parents
    out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return Tensor(data)

    def backward(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return Tensor(data)

    def backward(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return Tensor(data)

    def backward(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return Tensor(data)

    def backward(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(data, (a, b), backward)


# linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D and 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return Tensor(data)

    def backward(g, a=a, b=b):
        if a.ndim == 2 and b.ndim == 2:
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            if a.requires_grad:
                a._accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            if a.requires_grad:
                a._accumulate(b.data @ g)
            if b.requires_grad:
                b._accumulate(np.outer(a.data, g))
        else:
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)

    return _node(data, (a, b), backward)


# shape manipulation ------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not (_grad_enabled and any(t.requires_grad for t in tensors)):
        return Tensor(data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, tensors=tensors, offsets=offsets, axis=axis):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                key = tuple(
                    slice(start, stop) if i == axis else slice(None) for i in range(g.ndim)
                )
                t._accumulate(g[key])

    return _node(data, tuple(tensors), backward)


def narrow(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= start <= stop <= x.data.shape[axis]):
        raise ValueError(f"narrow range [{start}:{stop}] out of bounds for shape {x.shape}")
    key = tuple(slice(start, stop) if i == axis else slice(None) for i in range(x.ndim))
    data = x.data[key]
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)

    def backward(g, x=x, key=key):
        x._accumulate_at(key, g)

    return _node(data, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)

    def backward(g, x=x):
        x._accumulate(g.reshape(x.data.shape))

    return _node(data, (x,), backward)


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {x.shape}")
    data = x.data.T.copy()
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)

    def backward(g, x=x):
        x._accumulate(g.T)

    return _node(data, (x,), backward)


def gather(x, indices) -> Tensor:
    """Select rows (axis 0) of ``x``; duplicated indices accumulate gradient."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows: {indices}")
    data = x.data[idx]
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)

    def backward(g, x=x, idx=idx):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, idx, g)

    return _node(data, (x,), backward)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)

    def backward(g, x=x, axis=axis, keepdims=keepdims):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        x._accumulate(np.broadcast_to(gg, x.data.shape))

    return _node(data, (x,), backward)


# nonlinearities ----------------------------------------------------------


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(y)

    def backward(g, x=x, y=y):
        x._accumulate(g * (1.0 - y * y))

    return _node(y, (x,), backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid_np(x.data)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(y)

    def backward(g, x=x, y=y):
        x._accumulate(g * y * (1.0 - y))

    return _node(y, (x,), backward)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    y = np.sqrt(x.data)

    if not (_grad_enabled and x.requires_grad):
        return Tensor(y)

    def backward(g, x=x, y=y):
        # Guarded denominator: a zero upstream gradient at y == 0 stays zero
        # instead of producing 0 * inf.
        x._accumulate(g * 0.5 / np.maximum(y, 1e-300))

    return _node(y, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to one."""
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ValueError(f"softmax over an empty axis: shape {x.shape}, axis {axis}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(y)

    def backward(g, x=x, y=y, axis=axis):
        inner = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - inner))

    return _node(y, (x,), backward)


def logsumexp(x) -> Tensor:
    """log(sum(exp(x))) over all elements, shift-stabilized; 0-d result."""
    x = _as_tensor(x)
    m = float(x.data.max())
    data = np.asarray(m + np.log(np.exp(x.data - m).sum()))
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)

    def backward(g, x=x, out=float(data)):
        x._accumulate(g * np.exp(x.data - out))

    return _node(data, (x,), backward)


def power_norm(z) -> Tensor:
    """Signed square root sign(z) * |z|**0.5; gradient at z == 0 is 0."""
    z = _as_tensor(z)
    a = np.abs(z.data)
    y = np.sign(z.data) * np.sqrt(a)
    if not (_grad_enabled and z.requires_grad):
        return Tensor(y)

    def backward(g, z=z, a=a):
        d = np.zeros_like(a)
        nz = a > 0
        d[nz] = 0.5 / np.sqrt(a[nz])
        z._accumulate(g * d)

    return _node(y, (z,), backward)


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor) elementwise; subgradient passes only where x > floor."""
    x = _as_tensor(x)
    data = np.maximum(x.data, floor)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(data)
    mask = x.data > floor

    def backward(g, x=x, mask=mask):
        x._accumulate(g * mask)

    return _node(data, (x,), backward)


def normalize_power_l2(z, eps: float = 1e-12, axis=None) -> Tensor:
    """Power normalization followed by L2 normalization.

    ``axis=None`` treats ``z`` as one vector; ``axis=0`` normalizes each
    column independently. The eps floor keeps the zero vector at zero.
    """
    p = power_norm(z)
    if axis is None:
        norm = sqrt(tensor_sum(mul(p, p)))
    else:
        norm = sqrt(tensor_sum(mul(p, p), axis=axis, keepdims=True))
    return div(p, clip_min(norm, eps))
