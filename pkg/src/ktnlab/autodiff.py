"""Dense-matrix reverse-mode differentiation.

Every value is a 2-D float64 array. Operations build a graph of
:class:`Tensor` nodes; :func:`backward` walks it once in reverse
topological order and accumulates adjoints into ``.grad``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import kernels


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, copy=True):
        v = np.array(value, dtype=np.float64) if copy else np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        if v.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(v) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value[0, 0])

    def numpy(self):
        return self.value

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)


def parameter(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(value, parents, backward_fn):
    """Create a result node. ``backward_fn(g)`` returns one adjoint per parent
    (``None`` to skip)."""
    out = Tensor(value, copy=False)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad or g is None:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def tape(loss):
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = tape(loss)
    # intermediate adjoints start fresh; leaves keep accumulating
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for p, g in zip(node._parents, node._backward(node.grad)):
            _accumulate(p, g)


def zero_grads(params):
    for p in params:
        p.grad = np.zeros_like(p.value)


# -- primitives -------------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return make_op(
        av @ bv,
        (a, b),
        lambda g: (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None),
    )


def transpose(a):
    a = _as_tensor(a)
    return make_op(a.value.T.copy(), (a,), lambda g: (g.T,))


def _csr(s):
    m = getattr(s, "matrix", s)
    if not sp.isspmatrix_csr(m):
        m = sp.csr_matrix(m)
    return m


def sparse_matmul(s, d):
    """``s @ d`` with constant sparse ``s``; differentiates through ``d`` only."""
    m = _csr(s)
    d = _as_tensor(d)
    if m.shape[1] != d.shape[0]:
        raise ShapeError(f"sparse_matmul: {m.shape} @ {d.shape}")
    out = kernels.csr_matmul(m.indptr, m.indices, m.data, d.value)
    return make_op(
        out, (d,), lambda g: (kernels.csr_matmul_t(m.indptr, m.indices, m.data, g, m.shape[1]),)
    )


def concat_cols(parts):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols: no inputs")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return make_op(
        np.concatenate([p.value for p in parts], axis=1),
        parts,
        lambda g: tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts))),
    )


def relu(a):
    a = _as_tensor(a)
    mask = a.value > 0
    # np.maximum keeps NaN visible downstream
    return make_op(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,))


def identity(a):
    a = _as_tensor(a)
    return make_op(a.value.copy(), (a,), lambda g: (g,))


def scale_add(a, b, alpha=1.0, beta=1.0):
    """alpha * a + beta * b."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"scale_add: {a.shape} vs {b.shape}")
    return make_op(alpha * a.value + beta * b.value, (a, b), lambda g: (alpha * g, beta * g))


def add_bias(a, b):
    """Add row vector ``b`` (1 x cols) to every row of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.shape != (1, a.shape[1]):
        raise ShapeError(f"add_bias: {a.shape} + {b.shape}")
    return make_op(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def take_cols(a, start, stop):
    a = _as_tensor(a)
    n, m = a.shape

    def bw(g):
        out = np.zeros((n, m))
        out[:, start:stop] = g
        return (out,)

    return make_op(a.value[:, start:stop].copy(), (a,), bw)


def take_rows(a, idx):
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def bw(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return make_op(a.value[idx], (a,), bw)


# -- losses -----------------------------------------------------------------

def _target(b, a):
    bv = b.value if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if bv.shape != a.shape:
        raise ShapeError(f"loss: {a.shape} vs {bv.shape}")
    return bv


def mse_loss(a, b):
    """Mean of squared entry differences."""
    a = _as_tensor(a)
    bv = _target(b, a)
    diff = a.value - bv
    n = max(diff.size, 1)
    parents = (a, b) if isinstance(b, Tensor) else (a,)
    val = np.sum(diff * diff) / n

    def bw(g):
        d = (2.0 * g[0, 0] / n) * diff
        return (d, -d) if len(parents) == 2 else (d,)

    return make_op(val, parents, bw)


def frobenius_loss(a, b):
    """Unsquared Frobenius norm of ``a - b`` (gradient 0 at the kink)."""
    a = _as_tensor(a)
    bv = _target(b, a)
    diff = a.value - bv
    norm = float(np.sqrt(np.sum(diff * diff)))
    parents = (a, b) if isinstance(b, Tensor) else (a,)

    def bw(g):
        d = (g[0, 0] / norm) * diff if norm > 0 else np.zeros_like(diff)
        return (d, -d) if len(parents) == 2 else (d,)

    return make_op(norm, parents, bw)


def softmax_xent(logits, onehot):
    """Mean over rows of the softmax cross-entropy."""
    z = _as_tensor(logits)
    y = _target(onehot, z)
    if not np.all(np.isfinite(z.value)):
        raise FloatingPointError("softmax_xent: non-finite logits")
    n = max(z.shape[0], 1)
    shifted = z.value - z.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    val = -np.sum(y * logp) / n
    p = np.exp(logp)
    ysum = y.sum(axis=1, keepdims=True)
    return make_op(val, (z,), lambda g: ((g[0, 0] / n) * (p * ysum - y),))


def sigmoid_bce(logits, multihot):
    """Mean over rows of the per-class sigmoid cross-entropy, summed over classes."""
    z = _as_tensor(logits)
    y = _target(multihot, z)
    if not np.all(np.isfinite(z.value)):
        raise FloatingPointError("sigmoid_bce: non-finite logits")
    n = max(z.shape[0], 1)
    zv = z.value
    # softplus(z) - y z, stable form
    val = np.sum(np.maximum(zv, 0) - y * zv + np.log1p(np.exp(-np.abs(zv)))) / n
    sig = 0.5 * (1.0 + np.tanh(0.5 * zv))
    return make_op(val, (z,), lambda g: ((g[0, 0] / n) * (sig - y),))


# -- optimisation -----------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a list of parameter tensors."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr, self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        zero_grads(self.params)


def adam_step(params, m, v, lr, beta1, beta2, eps, t):
    """In-place Adam update at step ``t`` (1-based) with moment buffers m, v."""
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, mi, vi in zip(params, m, v):
        g = p.grad
        if g is None:
            continue
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * g * g
        p.value -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


def grad_check(loss_builder, params, eps=1e-5, max_entries=None, seed=0):
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_builder()`` must rebuild the loss from the current parameter
    values. With ``max_entries`` set, that many entries per parameter are
    sampled; otherwise every entry is checked.
    """
    rng = np.random.default_rng(seed)
    zero_grads(params)
    backward(loss_builder())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for k in idx:
            old = flat[k]
            flat[k] = old + eps
            fp = loss_builder().item()
            flat[k] = old - eps
            fm = loss_builder().item()
            flat[k] = old
            num = (fp - fm) / (2 * eps)
            ana = ga.reshape(-1)[k]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
