"""A small reverse-mode autodiff tensor over float64 numpy arrays.

Backward rules are themselves written with tensor operations, so gradients
can be differentiated again when ``create_graph=True``.
"""

import contextlib

import numpy as np

from ..errors import ShapeError, UsageError

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


@contextlib.contextmanager
def enable_grad():
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = True
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED[0]


class Tensor:
    """float64 array with an optional link to the operation that produced it."""

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    # arithmetic
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return self.swapaxes(-1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp, op):
    """Build an op result; graph links are kept only when a parent needs grad."""
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, vjp, op)
    return Tensor(data)


def unbroadcast(g: Tensor, shape) -> Tensor:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = tsum(g, tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = tsum(g, axes, keepdims=True)
    return g


# elementwise binary ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b), lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)),
        "div",
    )


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, n):
    """``a ** n`` for a constant real exponent."""
    a = as_tensor(a)
    n = float(n)
    if n == 2.0:
        return _make(a.data * a.data, (a,), lambda g: (g * a * 2.0,), "square")
    return _make(a.data**n, (a,), lambda g: (g * n * a ** (n - 1.0),), "pow")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (unbroadcast(g @ b.T, a.shape), unbroadcast(a.T @ g, b.shape)),
        "matmul",
    )


# reductions and shape ops

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _keepdims_shape(shape, axes):
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kshape = _keepdims_shape(a.shape, axes)

    def vjp(g):
        return (broadcast_to(reshape(g, kshape), a.shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / n)


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (unbroadcast(g, a.shape),), "broadcast")


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _scatter(g, idx, shape):
    """Adjoint of indexing: place ``g`` into zeros of ``shape`` at ``idx``."""
    out = np.zeros(shape)
    if _is_basic(idx):
        out[idx] += g.data
    else:
        np.add.at(out, idx, g.data)
    return _make(out, (g,), lambda gg: (getitem(gg, idx),), "scatter")


def getitem(a, idx):
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        raise UsageError("index with numpy arrays, not tensors")
    return _make(a.data[idx], (a,), lambda g: (_scatter(g, idx, a.shape),), "getitem")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), vjp, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


# elementwise unary ops

def exp(a):
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (g * out,)

    out = _make(np.exp(a.data), (a,), vjp, "exp")
    return out


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a,), "log")


def tanh(a):
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (g * (1.0 - out * out),)

    out = _make(np.tanh(a.data), (a,), vjp, "tanh")
    return out


def sqrt(a):
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (g * 0.5 / out,)

    out = _make(np.sqrt(a.data), (a,), vjp, "sqrt")
    return out


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * cos(a),), "sin")


def cos(a):
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * sin(a),), "cos")


def sigmoid(a):
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (g * out * (1.0 - out),)

    out = _make(0.5 * (1.0 + np.tanh(0.5 * a.data)), (a,), vjp, "sigmoid")
    return out


def softplus(a):
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * sigmoid(a),), "softplus")


def where(cond, a, b):
    """Select ``a`` where ``cond`` (a constant boolean array) holds, else ``b``."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, bool)
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return unbroadcast(g * cond, a.shape), unbroadcast(g * (~cond), b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), vjp, "where")


def amax(a, axis=-1, keepdims=False):
    """Maximum along ``axis``; ties share the gradient equally."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    mask = (a.data == m).astype(float)
    mask /= mask.sum(axis=axes, keepdims=True)
    kshape = _keepdims_shape(a.shape, axes)

    def vjp(g):
        return (broadcast_to(reshape(g, kshape), a.shape) * mask,)

    data = m if keepdims else m.reshape([s for i, s in enumerate(a.shape) if i not in axes])
    return _make(data, (a,), vjp, "max")


# differentiation

def _topo(output, needed):
    order, seen = [], set()
    stack_ = [(output, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) in needed and id(p) not in seen:
                stack_.append((p, False))
    return order[::-1]


def _needed(output, input_ids):
    """ids of nodes lying on some path from ``output`` back to an input."""
    memo = {}
    order, seen = [], set()
    stack_ = [(output, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    for node in order:  # parents before children
        memo[id(node)] = id(node) in input_ids or any(memo.get(id(p), False) for p in node._parents)
    return {k for k, v in memo.items() if v}


def grad(output, inputs, create_graph=False):
    """Gradients of a scalar ``output`` with respect to each tensor in ``inputs``.

    Args:
        output: scalar tensor.
        inputs: tensor or sequence of tensors.
        create_graph: record the backward pass so the result can be
            differentiated again.

    Inputs are treated as independent variables: propagation stops at
    each of them, so the results are partial derivatives even when one
    input was computed from another.

    Returns:
        List of tensors shaped like ``inputs`` (zeros where unreachable).
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if output.size != 1:
        raise UsageError(f"grad needs a scalar output, got shape {output.shape}")
    input_ids = {id(t) for t in inputs}
    grads = {}
    if output.requires_grad or id(output) in input_ids:
        needed = _needed(output, input_ids)
        ctx = enable_grad() if create_graph else no_grad()
        with ctx:
            grads[id(output)] = Tensor(np.ones(output.shape))
            for node in _topo(output, needed):
                g = grads.get(id(node))
                if g is None or node._vjp is None or id(node) in input_ids:
                    continue
                parent_grads = node._vjp(g)
                for p, pg in zip(node._parents, parent_grads):
                    if id(p) not in needed:
                        continue
                    grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg
    out = [grads.get(id(t), Tensor(np.zeros(t.shape))) for t in inputs]
    return out[0] if single else out


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)
