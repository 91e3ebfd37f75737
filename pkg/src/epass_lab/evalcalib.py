"""Accuracy, calibration and per-class classification metrics."""
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyLog, UndefinedClassMetric


@dataclass
class PredictionLog:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.probs) != len(self.labels):
            raise ValueError("probabilities and labels differ in length")
        if self.probs.size and np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("probability rows must sum to 1")

    def __len__(self):
        return len(self.labels)

    @property
    def predicted(self):
        return self.probs.argmax(axis=1)

    @property
    def confidence(self):
        return self.probs.max(axis=1)

    def accuracy(self):
        if not len(self):
            raise EmptyLog("no predictions")
        return float((self.predicted == self.labels).mean())


@dataclass
class ReliabilityBins:
    edges: np.ndarray
    counts: np.ndarray
    mean_confidence: np.ndarray  # NaN for empty bins
    accuracy: np.ndarray         # NaN for empty bins

    def to_tsv(self):
        lines = ["bin_lo\tbin_hi\tcount\tmean_confidence\taccuracy"]
        for i, n in enumerate(self.counts):
            lines.append("\t".join([_g(self.edges[i]), _g(self.edges[i + 1]), str(int(n)),
                                    _g(self.mean_confidence[i]), _g(self.accuracy[i])]))
        return "\n".join(lines) + "\n"

    def histogram_tsv(self):
        total = max(int(self.counts.sum()), 1)
        lines = ["bin_lo\tbin_hi\tcount\tfraction"]
        for i, n in enumerate(self.counts):
            lines.append("\t".join([_g(self.edges[i]), _g(self.edges[i + 1]), str(int(n)),
                                    _g(n / total)]))
        return "\n".join(lines) + "\n"


def _g(v):
    v = float(v)
    return "nan" if np.isnan(v) else f"{v:.6g}"


def reliability(log, M=10):
    """Uniform confidence bins; a confidence on an edge goes to the upper bin."""
    if not len(log):
        raise EmptyLog("no predictions")
    if M < 1:
        raise ValueError("need at least one bin")
    correct = (log.predicted == log.labels).astype(np.float64)
    counts, conf_sum, acc_sum = kernels.bin_stats(log.confidence, correct, M)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / counts, np.nan)
        acc = np.where(counts > 0, acc_sum / counts, np.nan)
    return ReliabilityBins(np.linspace(0.0, 1.0, M + 1), counts, mean_conf, acc)


def ece(log, M=10):
    """Expected calibration error: count-weighted mean |accuracy - confidence|."""
    bins = reliability(log, M)
    live = bins.counts > 0
    gaps = np.abs(bins.accuracy[live] - bins.mean_confidence[live])
    return float((bins.counts[live] * gaps).sum() / bins.counts.sum())


def _topk_error(log, k):
    k = min(k, log.probs.shape[1])
    # stable ordering: higher probability first, lower class index on ties
    order = np.argsort(-log.probs, axis=1, kind="stable")[:, :k]
    hit = (order == log.labels[:, None]).any(axis=1)
    return float(1.0 - hit.mean())


def auc_rank(scores, positives):
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(log):
    """Top-1/top-5 error and macro precision, recall, F1 and one-vs-rest AUC.

    Classes without positives get ``None`` for recall, F1 and AUC and are left
    out of the macro averages. Precision is 0 for a class never predicted.
    """
    if not len(log):
        raise EmptyLog("no predictions")
    C = log.probs.shape[1]
    if C < 2:
        raise ValueError("need at least two classes")
    pred, y = log.predicted, log.labels
    per_class = []
    for c in range(C):
        tp = int(((pred == c) & (y == c)).sum())
        fp = int(((pred == c) & (y != c)).sum())
        fn = int(((pred != c) & (y == c)).sum())
        if tp + fn == 0:
            warnings.warn(f"class {c} has no positives", UndefinedClassMetric)
            per_class.append({"class": c, "precision": None, "recall": None, "f1": None,
                              "auc": None, "support": 0})
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append({"class": c, "precision": precision, "recall": recall, "f1": f1,
                          "auc": auc_rank(log.probs[:, c], y == c), "support": tp + fn})

    def macro(key):
        vals = [r[key] for r in per_class if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "top1_error": _topk_error(log, 1),
        "top5_error": _topk_error(log, 5),
        "precision": macro("precision"),
        "recall": macro("recall"),
        "f1": macro("f1"),
        "auc": macro("auc"),
        "per_class": per_class,
    }


def metrics_document(log, M=10):
    """Everything the evaluation step reports, as a JSON-ready dict."""
    doc = classification_metrics(log)
    doc["accuracy"] = log.accuracy()
    doc["ece"] = ece(log, M)
    doc["n"] = len(log)
    doc["bins"] = M
    return doc


def write_metrics(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
