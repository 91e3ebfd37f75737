"""Dense float64 arithmetic with a small reverse-mode tape.

Every public kernel accepts plain arrays or :class:`Node` values. Plain
arrays in give plain arrays out; if any argument is a ``Node`` the result is
a ``Node`` and, inside an active :class:`Tape`, the application is recorded
so :meth:`Tape.backward` can push gradients to watched parameters.

Example
-------
>>> import numpy as np
>>> with Tape() as tape:
...     w = tape.watch(np.array([[1.0], [2.0]]))
...     loss = mean(matmul(np.array([[1.0, 1.0]]), w))
...     tape.backward(loss)
>>> w.grad.ravel().tolist()
[1.0, 1.0]
"""
import numpy as np

from . import kernels
from .errors import (InvalidDistribution, NonDeterministicLoss, NonFiniteValue,
                     NonPositiveTemperature, ShapeMismatch, ZeroVector)

LOG_EPS = 1e-12
ZERO_NORM = 1e-12
DIST_TOL = 1e-6

_ACTIVE = []


class Node:
    """A value in the computation graph, optionally carrying a gradient slot."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None, requires_grad=None):
        self.value = value
        self.grad = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward if requires_grad else None
        if requires_grad and backward is not None and _ACTIVE:
            _ACTIVE[-1].nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records kernel applications in topological order for one step."""

    def __init__(self):
        self.nodes = []
        self.leaves = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def watch(self, array, copy=True):
        """Gradient-tracked leaf. ``copy=False`` aliases the caller's array."""
        arr = np.array(array, dtype=np.float64, copy=True) if copy else array
        node = Node(arr, requires_grad=True)
        self.leaves.append(node)
        return node

    def zero_grad(self):
        for node in self.leaves:
            node.grad = None

    def backward(self, out):
        if out.value.size != 1:
            raise ShapeMismatch("backward needs a scalar output")
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward(node.grad)
        # each node is visited once; drop graph references afterwards
        for node in self.nodes:
            node._backward = None
        self.nodes = []


def _needs(x):
    return isinstance(x, Node) and x.requires_grad


def _accum(node, g, owned=False):
    """Add ``g`` into ``node.grad``; ``owned`` means ``g`` is a fresh array."""
    if not _needs(node):
        return
    if node.grad is None:
        node.grad = g if owned else np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad += g


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _finite(out, what):
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue(f"{what} produced a non-finite value")
    return out


def _result(inputs, value, backward):
    """Wrap ``value`` as a Node when any input is a Node, else return it."""
    nodes = tuple(x for x in inputs if isinstance(x, Node))
    if not nodes:
        return value
    return Node(value, nodes, backward)


def value(x):
    return _val(x)


# --- public elementary kernels ---------------------------------------------

def l2_normalize(v):
    """Scale ``v`` (a vector, or each row of a matrix) to unit L2 norm."""
    x = _val(v)
    rows = np.atleast_2d(x)
    y, norms = kernels.l2_normalize_rows(rows)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("cannot normalize a (near) zero vector")
    _finite(y, "l2_normalize")
    # rows already unit up to rounding are returned as-is, so normalizing twice
    # gives bitwise the same result as normalizing once
    unit = np.abs(norms - 1.0) <= (rows.shape[1] + 4) * np.finfo(np.float64).eps
    if unit.any():
        y[unit] = rows[unit]
    out = y.reshape(x.shape)

    def backward(g):
        gx = kernels.l2_normalize_rows_backward(y, norms, np.atleast_2d(g))
        _accum(v, gx.reshape(x.shape), owned=True)

    return _result((v,), out, backward)


def softmax_t(logits, T=1.0):
    """Temperature softmax over the last axis, computed with max-subtraction."""
    if not T > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {T}")
    x = _val(logits)
    _finite(x, "softmax_t input")
    s = kernels.softmax_rows(np.atleast_2d(x), T)
    out = s.reshape(x.shape)

    def backward(g):
        gx = kernels.softmax_rows_backward(s, np.atleast_2d(g), T)
        _accum(logits, gx.reshape(x.shape), owned=True)

    return _result((logits,), out, backward)


def cross_entropy(target, pred, check=True):
    """``-sum(target * log(max(pred, 1e-12)))`` per row.

    The target is always treated as a constant. Vectors give a scalar,
    matrices give one loss per row.
    """
    t = _val(target)
    p = _val(pred)
    if t.shape != p.shape:
        raise ShapeMismatch(f"target {t.shape} vs pred {p.shape}")
    t2, p2 = np.atleast_2d(t), np.atleast_2d(p)
    if check:
        for name, a in (("target", t2), ("pred", p2)):
            if np.any(np.abs(a.sum(axis=1) - 1.0) > DIST_TOL):
                raise InvalidDistribution(f"{name} rows must sum to 1")
    losses = kernels.cross_entropy_rows(t2, p2, LOG_EPS)
    out = losses[0] if t.ndim == 1 else losses
    out = np.asarray(out)

    def backward(g):
        g1 = np.atleast_1d(g).astype(np.float64)
        gp = kernels.cross_entropy_rows_backward(t2, p2, g1, LOG_EPS)
        _accum(pred, gp.reshape(p.shape), owned=True)

    return _result((pred,), out, backward)


# --- graph ops ---------------------------------------------------------------

def linear(x, W, b):
    xv, Wv, bv = _val(x), _val(W), _val(b)
    if xv.shape[-1] != Wv.shape[0]:
        raise ShapeMismatch(f"input width {xv.shape[-1]} vs layer {Wv.shape}")
    out = _finite(xv @ Wv + bv, "linear")

    def backward(g):
        if _needs(x):
            _accum(x, g @ Wv.T, owned=True)
        if _needs(W):
            _accum(W, xv.T @ g, owned=True)
        if _needs(b):
            _accum(b, g.sum(axis=0), owned=True)

    return _result((x, W, b), out, backward)


def relu(x):
    xv = _val(x)
    mask = xv > 0.0
    out = np.where(mask, xv, 0.0)

    def backward(g):
        _accum(x, np.where(mask, g, 0.0), owned=True)

    return _result((x,), out, backward)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
    out = _finite(av @ bv, "matmul")

    def backward(g):
        if _needs(a):
            _accum(a, g @ bv.T, owned=True)
        if _needs(b):
            _accum(b, av.T @ g, owned=True)

    return _result((a, b), out, backward)


def transpose(a):
    av = _val(a)

    def backward(g):
        _accum(a, g.T)

    return _result((a,), av.T.copy(), backward)


def rowdot(a, b):
    """Row-wise inner products of two equally shaped matrices."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ShapeMismatch(f"rowdot {av.shape} vs {bv.shape}")
    out = (av * bv).sum(axis=1)

    def backward(g):
        _accum(a, g[:, None] * bv)
        _accum(b, g[:, None] * av)

    return _result((a, b), out, backward)


def set_diag(m, d):
    """Copy of square matrix ``m`` with its diagonal replaced by ``d``."""
    mv, dv = _val(m), _val(d)
    n = mv.shape[0]
    if mv.shape != (n, n) or dv.shape != (n,):
        raise ShapeMismatch(f"set_diag {mv.shape} with {dv.shape}")
    out = mv.copy()
    idx = np.arange(n)
    out[idx, idx] = dv

    def backward(g):
        gm = g.copy()
        gm[idx, idx] = 0.0
        _accum(m, gm)
        _accum(d, g[idx, idx])

    return _result((m, d), out, backward)


def add(a, b):
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ShapeMismatch(f"add {av.shape} vs {bv.shape}")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _result((a, b), av + bv, backward)


def scale(a, c):
    c = float(c)

    def backward(g):
        _accum(a, g * c, owned=True)

    return _result((a,), _val(a) * c, backward)


def mean(a):
    av = _val(a)
    n = av.size

    def backward(g):
        _accum(a, np.full(av.shape, g / n))

    return _result((a,), np.asarray(av.sum() / n), backward)


def masked_mean(a, mask, n=None):
    """``sum(a[mask]) / n``; ``n`` defaults to the full length of ``a``."""
    av = _val(a)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != av.shape:
        raise ShapeMismatch(f"mask {m.shape} vs values {av.shape}")
    n = av.size if n is None else n

    def backward(g):
        _accum(a, m * (g / n))

    return _result((a,), np.asarray((av * m).sum() / n), backward)


def stack_sum(xs):
    vals = [_val(x) for x in xs]
    if any(v.shape != vals[0].shape for v in vals):
        raise ShapeMismatch("stack_sum needs equally shaped inputs")
    acc = vals[0].copy()
    for v in vals[1:]:
        acc = acc + v

    def backward(g):
        for x in xs:
            _accum(x, g)

    return _result(tuple(xs), acc, backward)


def stack_mean(xs):
    total = stack_sum(xs)
    return scale_div(total, len(xs))


def scale_div(a, d):
    """``a / d`` (kept separate from ``scale`` so ``d == 1`` is bit-exact)."""
    d = float(d)

    def backward(g):
        _accum(a, g / d, owned=True)

    return _result((a,), _val(a) / d, backward)


def concat(xs, axis=1):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            _accum(x, part)

    return _result(tuple(xs), out, backward)


# --- gradient checking ---------------------------------------------------------

def value_and_grad(fn, params):
    """Evaluate ``fn(*nodes)`` on a fresh tape; return (loss, grads)."""
    with Tape() as tape:
        nodes = [tape.watch(p) for p in params]
        loss = fn(*nodes)
        if isinstance(loss, Node) and loss.requires_grad:
            tape.backward(loss)
    grads = [n.grad if n.grad is not None else np.zeros_like(n.value) for n in nodes]
    return float(_val(loss)), grads


def grad_check(loss_fn, params, eps=1e-5, value_fn=None):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` for a list of arrays.
    ``value_fn(params)``, if given, returns the loss alone and is used for the
    perturbed evaluations (it skips the backward pass).
    Relative error per entry is ``|a - cd| / max(|a|, |cd|, 1e-8)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    loss0, grads = loss_fn(params)
    loss1, _ = loss_fn(params)
    if loss0 != loss1:
        raise NonDeterministicLoss(f"{loss0!r} != {loss1!r} at identical params")
    if value_fn is None:
        value_fn = lambda ps: loss_fn(ps)[0]  # noqa: E731
    elif float(value_fn(params)) != float(loss0):
        raise NonDeterministicLoss("value_fn disagrees with loss_fn at identical params")
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(value_fn(params))
            flat[i] = orig - eps
            down = float(value_fn(params))
            flat[i] = orig
            cd = (up - down) / (2.0 * eps)
            err = abs(gflat[i] - cd) / max(abs(gflat[i]), abs(cd), 1e-8)
            worst = max(worst, err)
    return worst
