"""Dense float64 tensors with reverse-mode gradient accumulation.

Every public op records its gradient rule on the implicit computation
graph; calling ``backward`` on a scalar result accumulates into the
``grad`` buffer of every reachable Param.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # operator sugar; everything funnels into the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


class Param(Tensor):
    """Trainable tensor with a persistent gradient accumulator."""

    __slots__ = ("grad", "trainable", "name")

    def __init__(self, data, name="", trainable=True):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable
        self.name = name

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def _bw(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    out._backward = _bw
    return out


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def _bw(g, acc):
        acc(a, _unbroadcast(g * b.data, a.shape))
        acc(b, _unbroadcast(g * a.data, b.shape))

    out._backward = _bw
    return out


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, (a,))
    out._backward = lambda g, acc: acc(a, g * c)
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), (a, b))

    def _bw(g, acc):
        if b.ndim == 1:
            acc(a, np.expand_dims(g, -1) * b.data)
            acc(b, _unbroadcast(np.expand_dims(g, -1) * a.data,
                                (1,) * (a.ndim - 1) + b.shape).reshape(b.shape))
        elif a.ndim == 1:
            acc(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
            acc(b, _unbroadcast(np.outer(a.data, g), b.shape))
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            acc(a, _unbroadcast(ga, a.shape))
            acc(b, _unbroadcast(gb, b.shape))

    out._backward = _bw
    return out


def _elementwise(a, fn, dfn):
    a = _as_tensor(a)
    out = Tensor(fn(a.data), (a,))
    out._backward = lambda g, acc: acc(a, g * dfn(a.data, out.data))
    return out


def sigmoid(a):
    return _elementwise(
        a,
        lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
        lambda x, y: y * (1.0 - y),
    )


def tanh(a):
    return _elementwise(a, np.tanh, lambda x, y: 1.0 - y * y)


def relu(a):
    return _elementwise(a, lambda x: np.maximum(x, 0.0),
                        lambda x, y: (x > 0.0).astype(np.float64))


def leaky_relu(a, slope=0.1):
    return _elementwise(
        a,
        lambda x: np.where(x > 0.0, x, slope * x),
        lambda x, y: np.where(x > 0.0, 1.0, slope),
    )


def exp(a):
    return _elementwise(a, np.exp, lambda x, y: y)


def log(a):
    return _elementwise(a, np.log, lambda x, y: 1.0 / x)


def absolute(a):
    # subgradient 0 at exactly-zero entries (lasso convention)
    return _elementwise(a, np.abs, lambda x, y: np.sign(x))


def power(a, p):
    p = float(p)
    return _elementwise(a, lambda x: x ** p, lambda x, y: p * x ** (p - 1.0))


def clip(a, lo, hi):
    # gradient passes through inside the range, zero where clamped
    return _elementwise(
        a,
        lambda x: np.clip(x, lo, hi),
        lambda x, y: ((x >= lo) & (x <= hi)).astype(np.float64),
    )


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def _bw(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, a.shape).copy())
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                for ax in sorted(ax % a.ndim for ax in axes):
                    g = np.expand_dims(g, ax)
            acc(a, np.broadcast_to(g, a.shape).copy())

    out._backward = _bw
    return out


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def softmax(a, axis=-1):
    """Numerically stable softmax (max-subtraction) along ``axis``."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, (a,))

    def _bw(g, acc):
        dot = (g * y).sum(axis=axis, keepdims=True)
        acc(a, y * (g - dot))

    out._backward = _bw
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), (a,))
    out._backward = lambda g, acc: acc(a, g.reshape(a.shape))
    return out


def transpose(a, axes):
    a = _as_tensor(a)
    out = Tensor(a.data.transpose(axes), (a,))
    inv = np.argsort(axes)
    out._backward = lambda g, acc: acc(a, g.transpose(inv))
    return out


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            acc(t, piece)

    out._backward = _bw
    return out


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))

    def _bw(g, acc):
        for i, t in enumerate(tensors):
            acc(t, np.take(g, i, axis=axis))

    out._backward = _bw
    return out


def slice_axis(a, axis, start, stop):
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx], (a,))

    def _bw(g, acc):
        full = np.zeros(a.shape)
        full[idx] = g
        acc(a, full)

    out._backward = _bw
    return out


def gather_rows(a, indices):
    """Select rows of a 2-d tensor by an integer index array.

    Output shape is ``indices.shape + (a.shape[1],)``; gradient scatters
    back with accumulation, so repeated indices are handled correctly.
    """
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and indices.max() >= a.shape[0]:
        raise IndexError(f"row index {indices.max()} out of range for {a.shape}")
    out = Tensor(a.data[indices], (a,))

    def _bw(g, acc):
        full = np.zeros(a.shape)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, a.shape[1]))
        acc(a, full)

    out._backward = _bw
    return out


def pad_axis(a, axis, before, after):
    """Zero-pad along one axis."""
    a = _as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = Tensor(np.pad(a.data, widths), (a,))
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(before, before + a.shape[axis])
    idx = tuple(idx)
    out._backward = lambda g, acc: acc(a, g[idx])
    return out


# ---------------------------------------------------------------------------
# backward pass and optimization
# ---------------------------------------------------------------------------

def backward(loss):
    """Accumulate d(loss)/d(param) into every reachable Param's grad.

    ``loss`` must be a scalar. Intermediate gradients live only for the
    duration of this call; Param grads persist and add up across calls.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if isinstance(loss, Param):
        loss.grad += np.ones_like(loss.data)
        return

    topo = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack_.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}

    def acc(t, g):
        if isinstance(t, Param):
            t.grad += g
        elif t._parents:
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)


def zero_grads(params):
    for p in params:
        p.grad[...] = 0.0


def sgd_step(params, lr):
    """Plain SGD: value -= lr * grad on trainable params."""
    for p in params:
        if p.trainable:
            p.data -= lr * p.grad


def grad_check(f, params, step=1e-4, tol=1e-3):
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    the given params. Returns a dict with the max relative error over all
    parameter entries and pass/fail against ``tol``.
    """
    zero_grads(params)
    backward(f())
    analytic = [p.grad.copy() for p in params]

    max_rel = 0.0
    worst = None
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            num = (hi - lo) / (2.0 * step)
            denom = max(abs(an_flat[i]), abs(num), 1e-8)
            rel = abs(an_flat[i] - num) / denom
            if rel > max_rel:
                max_rel = rel
                worst = (p.name, i, an_flat[i], num)
    zero_grads(params)
    return {"max_rel_err": max_rel, "tol": tol, "ok": max_rel <= tol, "worst": worst}
