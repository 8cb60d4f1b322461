"""Dense float64 tensors with reverse-mode automatic differentiation.

Every node stores its forward value, the parents it was computed from and
a closure mapping the upstream gradient to one gradient per parent.
``backward`` walks the graph in reverse topological order, visiting each
node once and summing contributions along every path.

Values are numpy arrays (nearly always 2-D). Constants are plain Tensors
with ``requires_grad=False``; no gradient is ever propagated into them.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DimensionError

DEFAULT_LEAKY_SLOPE = 0.01

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "sigmoid",
    "leaky_relu",
    "elu",
    "tanh",
    "exp",
    "log",
    "clip",
    "concat",
    "gather_rows",
    "slice_cols",
    "scatter_rows",
    "masked_softmax",
    "mean_rows",
    "sum_all",
    "mean_all",
    "transpose",
    "numeric_gradient",
    "gradient_check",
]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        self.value = value
        self.grad = None
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.value.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def numpy(self):
        return self.value.copy()

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return transpose(self)


def parameter(value, name=None):
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(value, parents, backward_fn):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents, backward_fn)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# -- binary ops --------------------------------------------------------------


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def back(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), back)


def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.value + b.value, (a, b), back)


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _node(a.value - b.value, (a, b), back)


def mul(a, b):
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _node(av * bv, (a, b), back)


# -- unary ops ---------------------------------------------------------------


def neg(a):
    return scale(a, -1.0)


def scale(a, factor):
    a = constant(a)
    factor = float(factor)
    return _node(a.value * factor, (a,), lambda g: (g * factor,))


def sigmoid(a):
    a = constant(a)
    x = a.value
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope=DEFAULT_LEAKY_SLOPE):
    a = constant(a)
    x = a.value
    d = np.where(x > 0, 1.0, slope)
    return _node(x * d, (a,), lambda g: (g * d,))


def elu(a, alpha=1.0):
    a = constant(a)
    x = a.value
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    d = np.where(x > 0, 1.0, neg_part + alpha)
    return _node(out, (a,), lambda g: (g * d,))


def tanh(a):
    a = constant(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = constant(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = constant(a)
    x = a.value
    if np.any(x <= 0):
        raise ContractError("log of non-positive value")
    return _node(np.log(x), (a,), lambda g: (g / x,))


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; gradient passes only where the value was inside."""
    a = constant(a)
    x = a.value
    inside = ((x >= lo) & (x <= hi)).astype(np.float64)
    return _node(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def transpose(a):
    a = constant(a)
    return _node(a.value.T.copy(), (a,), lambda g: (g.T,))


# -- structural ops ----------------------------------------------------------


def concat(tensors, axis=1):
    """Concatenate along ``axis`` (1 = side by side, 0 = stacked rows)."""
    tensors = [constant(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    other = 1 - axis
    ref = tensors[0].shape[other]
    for t in tensors[1:]:
        if t.value.ndim != 2 or t.shape[other] != ref:
            raise DimensionError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        if axis == 1:
            return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(sizes)))
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(sizes)))

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tensors, back)


def gather_rows(a, index):
    """Rows ``a[index]``; repeated indices accumulate in the gradient."""
    a = constant(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise DimensionError("gather_rows", a.shape, index.shape)
    n_rows = a.shape[0]

    def back(g):
        out = np.zeros((n_rows,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _node(a.value[index], (a,), back)


def scatter_rows(a, index, rows):
    """Copy of ``a`` with ``a[index]`` replaced by ``rows`` (indices must be distinct)."""
    a, rows = constant(a), constant(rows)
    index = np.asarray(index, dtype=np.intp)
    if rows.shape != (len(index),) + a.shape[1:]:
        raise DimensionError("scatter_rows", a.shape, rows.shape)
    if len(np.unique(index)) != len(index):
        raise ContractError("scatter_rows: repeated row index")
    out = a.value.copy()
    out[index] = rows.value

    def back(g):
        ga = g.copy()
        ga[index] = 0.0
        return ga, g[index]

    return _node(out, (a, rows), back)


def slice_cols(a, start, stop):
    a = constant(a)
    shape = a.shape
    if not 0 <= start <= stop <= shape[1]:
        raise DimensionError("slice_cols", shape, (start, stop))

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _node(a.value[:, start:stop].copy(), (a,), back)


def masked_softmax(logits, mask):
    """Row-wise softmax restricted to entries where ``mask`` is true.

    Masked-out entries get probability exactly 0. A row with no unmasked
    entry is a contract error.
    """
    logits = constant(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError("masked_softmax", logits.shape, mask.shape)
    if not mask.any(axis=1).all():
        raise ContractError("masked_softmax: a row is fully masked")
    x = np.where(mask, logits.value, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(x), 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (logits,), back)


def mean_rows(a):
    """Column-wise mean over rows, giving a 1 x cols row vector."""
    a = constant(a)
    n = a.shape[0]
    if n == 0:
        raise ContractError("mean over zero rows")
    return _node(a.value.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / n, n, axis=0),))


def sum_all(a):
    a = constant(a)
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a):
    a = constant(a)
    shape = a.shape
    n = a.value.size
    if n == 0:
        raise ContractError("mean over an empty tensor")
    return _node(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


# -- backward ----------------------------------------------------------------


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable parameter.

    Intermediate nodes are released after use so repeated calls on fresh
    graphs do not retain memory. Leaf gradients are summed into any
    existing ``.grad``; call ``zero_grad`` between steps.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- finite differences ------------------------------------------------------


def numeric_gradient(fn, param, step=1e-5):
    """Central finite-difference gradient of scalar ``fn()`` w.r.t. ``param``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn().item()
        flat[i] = orig - step
        lo = fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_check(fn, params, step=1e-5, rtol=1e-4, atol=1e-7):
    """Compare analytic and central-difference gradients of scalar ``fn()``.

    An entry passes when ``|analytic - numeric| <= max(atol, rtol * max(|a|, |n|))``.
    Returns ``(ok, worst)`` where ``worst`` is ``(name, diff, allowed)`` for the
    entry closest to (or furthest past) its tolerance.
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
    worst, worst_ratio = (None, 0.0, 0.0), -1.0
    for idx, (p, a) in enumerate(zip(params, analytic)):
        n = numeric_gradient(fn, p, step)
        diff = np.abs(a - n).reshape(-1)
        allowed = np.maximum(atol, rtol * np.maximum(np.abs(a), np.abs(n))).reshape(-1)
        ratio = diff / allowed
        k = int(np.argmax(ratio))
        if ratio[k] > worst_ratio:
            worst_ratio = ratio[k]
            worst = (p.name or f"param{idx}", float(diff[k]), float(allowed[k]))
    return worst_ratio <= 1.0, worst
