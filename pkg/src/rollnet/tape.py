"""Small reverse-mode autodiff over numpy arrays.

Just enough operations to differentiate the training objectives: affine
layers with broadcast leading axes, elementwise arithmetic, reductions,
hinge pieces and the two cross-entropy losses. Every node keeps its forward
rule, so a graph can be replayed from its leaves (``replay``).
"""

import numpy as np


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_fwd", "_bwd", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _fwd=None, _bwd=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._fwd = _fwd
        self._bwd = _bwd
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _op(fwd, bwd, *parents):
        ref = next((p.data.dtype for p in parents
                    if isinstance(p, Tensor) and p.data.dtype.kind == "f"), None)
        parents = tuple(p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=ref))
                        for p in parents)
        out = fwd(*(p.data for p in parents))
        need = any(p.requires_grad for p in parents)
        return Tensor(out, need, None, parents if need else (), fwd, bwd)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    # -- reverse pass -------------------------------------------------------

    def backward(self, seed=None):
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _topo(self)
        grads = {id(self): np.asarray(seed, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            pgrads = node._bwd(g, node.data, *(p.data for p in node._parents))
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(pg, p.data.shape)
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
        return self


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def replay(root):
    """Recompute every node of ``root``'s graph from its leaves; returns the new output."""
    values = {}
    for node in _topo(root):
        if not node._parents:
            values[id(node)] = node.data
        else:
            values[id(node)] = node._fwd(*(values[id(p)] for p in node._parents))
    return values[id(root)]


def param(a, name=None):
    return Tensor(np.array(a, copy=True), requires_grad=True, name=name)


def const(a):
    return Tensor(a)


# ---------------------------------------------------------------------------
# operations


def add(a, b):
    return Tensor._op(np.add, lambda g, out, x, y: (g, g), a, b)


def sub(a, b):
    return Tensor._op(np.subtract, lambda g, out, x, y: (g, -g), a, b)


def _needs(t):
    return isinstance(t, Tensor) and t.requires_grad


def mul(a, b):
    na, nb = _needs(a), _needs(b)

    def bwd(g, out, x, y):
        return (g * y if na else None, g * x if nb else None)

    return Tensor._op(np.multiply, bwd, a, b)


def square(a):
    return Tensor._op(np.square, lambda g, out, x: (2.0 * g * x,), a)


def tabs(a):
    # sub-gradient sign(z), 0 at z = 0
    return Tensor._op(np.abs, lambda g, out, x: (g * np.sign(x),), a)


def relu0(a):
    """max(0, a) with sub-gradient 0 at a = 0 (used for hinge terms)."""
    return Tensor._op(lambda x: np.maximum(x, 0.0),
                      lambda g, out, x: (g * (x > 0),), a)


def tsum(a, axis=None):
    def fwd(x):
        return np.sum(x, axis=axis)

    def bwd(g, out, x):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return Tensor._op(fwd, bwd, a)


def mean(a, axis=None):
    a = a if isinstance(a, Tensor) else Tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def take(a, idx):
    def bwd(g, out, x):
        full = np.zeros_like(x)
        if _has_advanced(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor._op(lambda x: x[idx], bwd, a)


def _has_advanced(idx):
    idx = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def concat(tensors, axis=-1):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def fwd(*xs):
        return np.concatenate(xs, axis=axis)

    def bwd(g, out, *xs):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._op(fwd, bwd, *tensors)


def linear(x, w, b=None):
    """``x @ w.T + b`` over the last axis of ``x`` (any number of leading axes)."""

    def fwd(xv, wv, bv=None):
        y = xv @ wv.T
        return y if bv is None else y + bv

    need_x = _needs(x)

    def bwd(g, out, xv, wv, bv=None):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        gw = g2.T @ x2
        gx = g @ wv if need_x else None
        if bv is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    if b is None:
        return Tensor._op(fwd, bwd, x, w)
    return Tensor._op(fwd, bwd, x, w, b)


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy of (B, L) logits against integer labels."""
    labels = np.asarray(labels)

    def fwd(z):
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        return np.mean(lse - z[np.arange(z.shape[0]), labels])

    def bwd(g, out, z):
        m = z.max(axis=1, keepdims=True)
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(z.shape[0]), labels] -= 1.0
        return (g * p / z.shape[0],)

    return Tensor._op(fwd, bwd, logits)


def sigmoid_xent(logits, labels):
    """Mean binary cross-entropy of (B, 1) logits against 0/1 labels."""
    sgn = (2.0 * np.asarray(labels, dtype=np.float64) - 1.0)

    def fwd(z):
        s = z[:, 0] * sgn
        return np.mean(np.logaddexp(0.0, -s))

    def bwd(g, out, z):
        p = 0.5 * (1.0 + np.tanh(0.5 * z[:, 0]))
        d = (p - (sgn > 0)) / z.shape[0]
        return (g * d[:, None].astype(z.dtype),)

    return Tensor._op(fwd, bwd, logits)


def activation(a, alpha=0.0):
    """ReLU (``alpha = 0``) or leaky ReLU, sub-gradient 1 at zero."""

    def fwd(x):
        return np.where(x >= 0, x, alpha * x) if alpha else np.maximum(x, 0.0)

    def bwd(g, out, x):
        return (g * np.where(x >= 0, 1.0, alpha).astype(x.dtype),)

    return Tensor._op(fwd, bwd, a)
