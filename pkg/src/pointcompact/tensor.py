"""Reverse-mode autodiff over dense float64 numpy buffers.

A :class:`DiffTensor` wraps a C-contiguous float64 array and, when it is
produced by an operation on tensors that require gradients, remembers its
parents and a backward rule. Calling ``backward()`` on a scalar result runs
the chain rule over the implicit DAG and accumulates gradients into the leaf
tensors, then frees the graph. Graphs are therefore per-forward-call and
single use; leaves (parameters) survive and keep their ``grad`` buffers.

Everything is float64 and deterministic: the same inputs produce bit-identical
outputs and gradients run to run.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

_NODE_IDS = itertools.count()
_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Tensor extents incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Invalid use of a computation graph (non-scalar backward, reused graph)."""


def _f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)
    return a


class no_grad:
    """Context manager that disables graph construction (pure evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class DiffTensor:
    """Dense n-dimensional float64 value participating in reverse-mode AD.

    Attributes:
        data: float64 ndarray, row-major.
        grad: accumulated gradient of the same shape, or None.
        node_id: identity of this node within its graph.
        requires_grad: whether gradients flow into this tensor.
    """

    __slots__ = ("data", "grad", "node_id", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _f64(data)
        self.grad = None
        self.node_id = next(_NODE_IDS)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._grad_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------------

    def backward(self):
        """Run reverse-mode accumulation from this scalar, then free the graph."""
        if self.data.size != 1:
            raise GraphError(f"backward() requires a scalar output, got shape {self.shape}")
        topo = self._toposort()
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._grad_fn
            if fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        # free the graph; leaves keep their grads
        for node in topo:
            if node._grad_fn is not None:
                node._parents = ()
                node._grad_fn = None
                if node is not self:
                    node.grad = None

    def _toposort(self):
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return topo

    # -- operator sugar (definitions below) -----------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=-1, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def min(self, axis=-1, keepdims=False):
        return tmin(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


@dataclass
class Parameter:
    """A named, trainable leaf tensor of a model."""

    tensor: DiffTensor
    name: str
    trainable: bool = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size

    def zero_grad(self):
        self.tensor.grad = None


def parameter(data, name: str, trainable: bool = True) -> Parameter:
    t = DiffTensor(data, requires_grad=True)
    return Parameter(t, name, trainable)


def named_parameters(params) -> dict:
    """Index parameters by name, enforcing uniqueness."""
    out = {}
    for p in params:
        if p.name in out:
            raise ValueError(f"duplicate parameter name: {p.name!r}")
        out[p.name] = p
    return out


# -- graph construction helpers -----------------------------------------------


def _make(data: np.ndarray, parents: tuple, grad_fn) -> DiffTensor:
    out = DiffTensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape` by summing."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_data(a: DiffTensor, b: DiffTensor, opname: str) -> np.ndarray:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic -----------------------------------------------------


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _broadcast_data(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _broadcast_data(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _broadcast_data(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _broadcast_data(a, b, "div")
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: DiffTensor) -> DiffTensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: DiffTensor, p: float) -> DiffTensor:
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a: DiffTensor) -> DiffTensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: DiffTensor) -> DiffTensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: DiffTensor) -> DiffTensor:
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def gelu(a: DiffTensor) -> DiffTensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
    return _make(a.data * cdf, (a,), lambda g: (g * (cdf + a.data * pdf),))


# -- matmul ---------------------------------------------------------------------


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Batched matrix product. Inner extents must agree; batch extents broadcast.

    1-D operands promote the numpy way: (n,) @ (n, m) -> (m,) and
    (..., n, m) @ (m,) -> (..., n).
    """
    if a.ndim == 1 and b.ndim >= 2:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1 and a.ndim >= 2:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 1 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul batch extents do not broadcast: {a.shape} @ {b.shape}") from None

    def grad_fn(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), grad_fn)


# -- reductions -------------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.ascontiguousarray(np.broadcast_to(g, shape))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.ascontiguousarray(np.broadcast_to(g, shape))


def tsum(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(data, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def tmean(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / data.size
    return _make(data, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / n,))


def _extreme(a: DiffTensor, axis: int, keepdims: bool, npfun, argfun) -> DiffTensor:
    data = npfun(a.data, axis=axis, keepdims=keepdims)
    idx = argfun(a.data, axis=axis)

    def grad_fn(g):
        gz = np.zeros_like(a.data)
        ge = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gz, np.expand_dims(idx, axis), ge, axis)
        return (gz,)

    return _make(data, (a,), grad_fn)


def tmax(a: DiffTensor, axis: int = -1, keepdims: bool = False) -> DiffTensor:
    """Max along one axis; gradient routes to the first maximal entry."""
    return _extreme(a, axis, keepdims, np.max, np.argmax)


def tmin(a: DiffTensor, axis: int = -1, keepdims: bool = False) -> DiffTensor:
    """Min along one axis; gradient routes to the first minimal entry."""
    return _extreme(a, axis, keepdims, np.min, np.argmin)


# -- softmax family ----------------------------------------------------------------


def softmax(a: DiffTensor, axis: int = -1) -> DiffTensor:
    """Numerically stabilized softmax along `axis`."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a: DiffTensor, axis: int = -1) -> DiffTensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    sm = np.exp(y)
    return _make(y, (a,),
                 lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


# -- shape ops -----------------------------------------------------------------------


def reshape(a: DiffTensor, shape: tuple) -> DiffTensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: DiffTensor, ax1: int, ax2: int) -> DiffTensor:
    return _make(np.ascontiguousarray(a.data.swapaxes(ax1, ax2)), (a,),
                 lambda g: (np.ascontiguousarray(g.swapaxes(ax1, ax2)),))


def concat(tensors, axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), grad_fn)


def broadcast_to(a: DiffTensor, shape: tuple) -> DiffTensor:
    data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _make(data, (a,), lambda g: (_unbroadcast(g, a.shape),))


def slice_axis(a: DiffTensor, start: int, stop: int, axis: int = -2) -> DiffTensor:
    """Contiguous slice [start:stop) along one axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = np.ascontiguousarray(a.data[idx])

    def grad_fn(g):
        gz = np.zeros_like(a.data)
        gz[idx] = g
        return (gz,)

    return _make(data, (a,), grad_fn)


def getitem(a: DiffTensor, idx) -> DiffTensor:
    data = np.ascontiguousarray(a.data[idx])

    def grad_fn(g):
        gz = np.zeros_like(a.data)
        np.add.at(gz, idx, g)
        return (gz,)

    return _make(data, (a,), grad_fn)


def gather_tokens(x: DiffTensor, idx: np.ndarray) -> DiffTensor:
    """Gather token rows: x (B, V, D) with idx (B, Q, k) -> (B, Q, k, D).

    Unbatched x (V, D) with idx (Q, k) -> (Q, k, D). The backward pass
    scatter-adds into duplicate indices.
    """
    idx = np.asarray(idx)
    if x.ndim == 2:
        data = x.data[idx]

        def grad_fn(g):
            gz = np.zeros_like(x.data)
            np.add.at(gz, idx, g)
            return (gz,)

        return _make(np.ascontiguousarray(data), (x,), grad_fn)
    if x.ndim != 3 or idx.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_tokens: incompatible shapes {x.shape} and {idx.shape}")
    b = np.arange(x.shape[0])[:, None, None]
    data = x.data[b, idx]

    def grad_fn(g):
        gz = np.zeros_like(x.data)
        np.add.at(gz, (b, idx), g)
        return (gz,)

    return _make(np.ascontiguousarray(data), (x,), grad_fn)
