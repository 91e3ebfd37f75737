"""Kernel backend selection.

The compiled extension is used when it was built; setting
``EPASS_LAB_PURE=1`` forces the numpy fallback. Callers go through this
module so every kernel receives contiguous float64 input.
"""
import os

import numpy as np

if os.environ.get("EPASS_LAB_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def softmax_rows(x, T):
    return _impl.softmax_rows(_c(x), float(T))


def softmax_rows_backward(s, g, T):
    return _impl.softmax_rows_backward(_c(s), _c(g), float(T))


def l2_normalize_rows(x):
    return _impl.l2_normalize_rows(_c(x))


def l2_normalize_rows_backward(y, norms, g):
    return _impl.l2_normalize_rows_backward(_c(y), _c(norms), _c(g))


def cross_entropy_rows(t, p, eps):
    return _impl.cross_entropy_rows(_c(t), _c(p), float(eps))


def cross_entropy_rows_backward(t, p, g, eps):
    return _impl.cross_entropy_rows_backward(_c(t), _c(p), _c(g), float(eps))


def lerp_(dst, src, m):
    if not (dst.flags.c_contiguous and dst.dtype == np.float64):
        raise TypeError("lerp_ target must be a contiguous float64 array")
    _impl.lerp_(dst.reshape(-1), _c(src).reshape(-1), float(m))


def bin_stats(conf, correct, M):
    return _impl.bin_stats(_c(conf), _c(correct), int(M))


def sgd_update_(p, v, g, lr, momentum, wd):
    for a in (p, v):
        if not (a.flags.c_contiguous and a.dtype == np.float64):
            raise TypeError("sgd_update_ buffers must be contiguous float64 arrays")
    _impl.sgd_update_(p.reshape(-1), v.reshape(-1), _c(g).reshape(-1),
                      float(lr), float(momentum), float(wd))
