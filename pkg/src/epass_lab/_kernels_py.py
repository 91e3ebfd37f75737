"""Pure numpy kernels. Same signatures as the compiled ``_kernels`` module."""
import numpy as np

BACKEND = "numpy"


def softmax_rows(x, T):
    z = (x - x.max(axis=1, keepdims=True)) * (1.0 / T)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(s, g, T):
    dot = (g * s).sum(axis=1, keepdims=True)
    return s * (g - dot) / T


def l2_normalize_rows(x):
    norms = np.sqrt((x * x).sum(axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)
    out = x / safe[:, None]
    out[norms == 0.0] = 0.0
    return out, norms


def l2_normalize_rows_backward(y, norms, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return (g - y * dot) / norms[:, None]


def cross_entropy_rows(t, p, eps):
    return -(t * np.log(np.maximum(p, eps))).sum(axis=1)


def cross_entropy_rows_backward(t, p, g, eps):
    live = p >= eps
    out = np.zeros_like(p)
    out[live] = (-g[:, None] * t / np.where(live, p, 1.0))[live]
    return out


def lerp_(dst, src, m):
    """In place ``dst = m * dst + (1 - m) * src``."""
    dst *= m
    dst += (1.0 - m) * src


def bin_stats(conf, correct, M):
    idx = np.clip((conf * M).astype(np.int64), 0, M - 1)
    counts = np.bincount(idx, minlength=M).astype(np.int64)
    csum = np.bincount(idx, weights=conf, minlength=M)
    asum = np.bincount(idx, weights=correct, minlength=M)
    return counts, csum, asum


def sgd_update_(p, v, g, lr, momentum, wd):
    """In place ``v = momentum * v + (g + wd * p)``, ``p = p - lr * v``."""
    v *= momentum
    v += g + wd * p
    p -= lr * v
