"""Training objectives: supervised, thresholded pseudo-label, and the two
contrastive graph losses, plus distribution alignment of weak predictions.

Targets derived from weak views (pseudo-labels, similarity distributions,
the pseudo-label graph) are always treated as constants.
"""
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DegenerateRunningMean, ShapeMismatch

DA_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda_u: float = 1.0
    lambda_c: float = 1.0
    tau: float = 0.95
    tau_c: float = 0.8
    T: float = 0.1

    def __post_init__(self):
        if self.lambda_u < 0 or self.lambda_c < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 <= self.tau_c <= 1.0:
            raise ValueError("tau_c must lie in [0, 1]")
        if not self.T > 0:
            raise ValueError("temperature must be positive")


class DaState:
    """Running mean of recent weak-view predictions for distribution alignment."""

    def __init__(self, num_classes, window=32, target=None):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.target = (np.full(num_classes, 1.0 / num_classes) if target is None
                       else np.asarray(target, dtype=np.float64))
        self.history = deque(maxlen=window)

    @property
    def running_mean(self):
        if not self.history:
            return self.target.copy()
        return np.mean(np.stack(self.history), axis=0)

    def push(self, p_w):
        self.history.append(np.asarray(p_w, dtype=np.float64).mean(axis=0))


def distribution_align(da, p_w):
    """Rescale rows by ``target / running_mean`` and renormalize.

    The running mean is updated with this batch *after* aligning it.
    """
    p_w = np.asarray(nc.value(p_w), dtype=np.float64)
    if p_w.ndim != 2 or p_w.shape[1] != da.target.size:
        raise ShapeMismatch(f"predictions {p_w.shape} vs {da.target.size} classes")
    pbar = da.running_mean
    if np.any(pbar < DA_FLOOR):
        warnings.warn("running mean has entries below 1e-8; clamping", DegenerateRunningMean)
        pbar = np.maximum(pbar, DA_FLOOR)
    aligned = p_w * (da.target / pbar)
    aligned = aligned / aligned.sum(axis=1, keepdims=True)
    da.push(p_w)
    return aligned


def _rows(a, name):
    v = nc.value(a)
    if v.ndim != 2:
        raise ShapeMismatch(f"{name} must be a matrix, got shape {v.shape}")
    return v


def supervised_loss(y, p):
    """Mean cross-entropy between one-hot labels and predictions."""
    yv, pv = _rows(y, "y"), _rows(p, "p")
    if yv.shape != pv.shape:
        raise ShapeMismatch(f"labels {yv.shape} vs predictions {pv.shape}")
    return nc.mean(nc.cross_entropy(yv, p))


def pseudo_targets(p_hat_w, tau, hard=True):
    """Confidence mask and targets (one-hot argmax when ``hard``)."""
    p_hat_w = np.asarray(nc.value(p_hat_w), dtype=np.float64)
    mask = p_hat_w.max(axis=1) >= tau
    if hard:
        targets = np.zeros_like(p_hat_w)
        targets[np.arange(len(p_hat_w)), p_hat_w.argmax(axis=1)] = 1.0
    else:
        targets = p_hat_w
    return targets, mask


def unsupervised_loss(p_hat_w, p_s, tau, hard=True):
    """Masked pseudo-label loss averaged over the whole unlabeled batch.

    Returns ``(loss, mask)``.
    """
    pw, ps = _rows(p_hat_w, "p_hat_w"), _rows(p_s, "p_s")
    if pw.shape != ps.shape:
        raise ShapeMismatch(f"weak {pw.shape} vs strong {ps.shape}")
    targets, mask = pseudo_targets(pw, tau, hard)
    loss = nc.masked_mean(nc.cross_entropy(targets, p_s), mask)
    return loss, mask


def simmatch_contrastive(q_w, q_s):
    """Mean cross-entropy from weak to strong instance-similarity distributions."""
    qw, qs = _rows(q_w, "q_w"), _rows(q_s, "q_s")
    if qw.shape != qs.shape:
        raise ShapeMismatch(f"weak {qw.shape} vs strong {qs.shape}")
    return nc.mean(nc.cross_entropy(qw, q_s))


def pseudo_label_graph(q_bar, tau_c):
    """Row-normalized pseudo-label graph (unit self-loops, thresholded off-diagonal)."""
    q = np.asarray(nc.value(q_bar), dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ShapeMismatch(f"need a batch of at least 2 distributions, got {q.shape}")
    W = q @ q.T
    W[W < tau_c] = 0.0
    np.fill_diagonal(W, 1.0)
    return W / W.sum(axis=1, keepdims=True)


def embedding_graph(z, z_prime, T):
    """Row-normalized embedding graph.

    Off-diagonal entries use ``exp(z_b . z_j / T)``; the diagonal compares each
    sample with its second strong view, ``exp(z_b . z'_b / T)``.
    """
    zv, zpv = _rows(z, "z"), _rows(z_prime, "z_prime")
    if zv.shape != zpv.shape or zv.shape[0] < 2:
        raise ShapeMismatch(f"embedding batches {zv.shape} vs {zpv.shape}")
    logits = nc.set_diag(nc.matmul(z, nc.transpose(z)), nc.rowdot(z, z_prime))
    return nc.softmax_t(logits, T)


def comatch_graphs(q_bar, z, z_prime, tau_c, T):
    """Return ``(W_q_hat, W_z_hat)``; the second carries gradients to ``z``, ``z'``."""
    Wq = pseudo_label_graph(q_bar, tau_c)
    Wz = embedding_graph(z, z_prime, T)
    if Wq.shape != nc.value(Wz).shape:
        raise ShapeMismatch(f"graphs {Wq.shape} vs {nc.value(Wz).shape}")
    return Wq, Wz


def comatch_contrastive(Wq, Wz):
    """Mean row cross-entropy between the two normalized graphs."""
    a, b = _rows(Wq, "Wq"), _rows(Wz, "Wz")
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"graphs {a.shape} vs {b.shape}")
    return nc.mean(nc.cross_entropy(a, Wz))


def comatch_contrastive_decomposed(Wq, z, z_prime, T):
    """Same quantity as :func:`comatch_contrastive`, expanded into the
    self-pair term and the sum over other samples (values only)."""
    Wq = np.asarray(Wq, dtype=np.float64)
    z = np.asarray(nc.value(z), dtype=np.float64)
    zp = np.asarray(nc.value(z_prime), dtype=np.float64)
    n = z.shape[0]
    total = 0.0
    for b in range(n):
        self_sim = z[b] @ zp[b] / T
        sims = np.array([self_sim if j == b else z[b] @ z[j] / T for j in range(n)])
        denom = np.exp(sims).sum()  # unnormalized row sum of the embedding graph
        term = -Wq[b, b] * np.log(np.exp(self_sim) / denom)
        for j in range(n):
            if j != b:
                term -= Wq[b, j] * np.log(np.exp(sims[j]) / denom)
        total += term
    return total / n


def total_loss(ls, lu, lc, weights):
    """``ls + lambda_u * lu + lambda_c * lc``."""
    return nc.add(nc.add(ls, nc.scale(lu, weights.lambda_u)), nc.scale(lc, weights.lambda_c))
