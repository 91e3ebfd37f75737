import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epass_lab import evalcalib as ev
from epass_lab.errors import EmptyLog, UndefinedClassMetric

import _oracles


def log_of(conf_correct):
    """Binary log with given (confidence, correct) pairs; class 0 predicted."""
    probs = np.array([[c, 1 - c] for c, _ in conf_correct])
    labels = np.array([0 if ok else 1 for _, ok in conf_correct])
    return ev.PredictionLog(probs, labels)


def test_ece_examples():
    assert ev.ece(log_of([(1.0, True)] * 5)) == 0.0
    log = log_of([(0.9, True), (0.9, False)])
    assert ev.ece(log, M=1) == pytest.approx(0.4, abs=1e-15)
    # two equally filled bins, gaps 0.1 and 0.3
    log = log_of([(0.65, True), (0.65, True), (0.65, False), (0.65, True),
                  (0.95, True), (0.95, True), (0.95, False), (0.95, False)])
    assert ev.ece(log) == pytest.approx(0.5 * abs(0.75 - 0.65) + 0.5 * abs(0.5 - 0.95), abs=1e-15)
    log = log_of([(0.6, True), (0.6, True), (0.6, True), (0.6, False), (0.6, False),
                  (0.9, True), (0.9, True), (0.9, True), (0.9, True), (0.9, True)])
    assert ev.ece(log) == pytest.approx(0.5 * 0.0 + 0.5 * 0.1, abs=1e-15)
    with pytest.raises(EmptyLog):
        ev.ece(ev.PredictionLog(np.zeros((0, 2)), np.zeros(0)))


def test_edge_goes_to_upper_bin():
    bins = ev.reliability(log_of([(0.5, True), (0.7, True), (1.0, True)]), 10)
    assert bins.counts[5] == 1 and bins.counts[7] == 1 and bins.counts[9] == 1


def test_reliability_examples():
    bins = ev.reliability(log_of([(0.55, True)] * 4), 10)
    assert bins.counts.tolist() == [0, 0, 0, 0, 0, 4, 0, 0, 0, 0]
    assert np.isnan(bins.accuracy[0])
    np.testing.assert_allclose(bins.edges, np.linspace(0, 1, 11))
    rng = np.random.default_rng(0)
    conf = rng.uniform(0.5, 1.0, 200000)
    correct = rng.random(conf.size) < conf
    b = ev.reliability(log_of(list(zip(conf, correct))), 10)
    live = b.counts > 0
    np.testing.assert_allclose(b.accuracy[live], b.mean_confidence[live], atol=0.01)
    assert b.counts.sum() == conf.size


def test_tsv_exports():
    b = ev.reliability(log_of([(0.55, True), (0.91, False)]), 4)
    rows = [line.split("\t") for line in b.to_tsv().splitlines()]
    assert rows[0] == ["bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"]
    assert rows[3] == ["0.5", "0.75", "1", "0.55", "1"]
    assert rows[1][3] == "nan"
    hist = [line.split("\t") for line in b.histogram_tsv().splitlines()]
    assert hist[4] == ["0.75", "1", "1", "0.5"]
    assert ev._g(1 / 3) == "0.333333"


@given(st.integers(0, 10 ** 6), st.integers(1, 15))
def test_ece_single_bin_and_permutation(seed, M):
    rng = np.random.default_rng(seed)
    n, C = int(rng.integers(1, 30)), int(rng.integers(2, 5))
    p = rng.dirichlet(np.ones(C), size=n)
    y = rng.integers(0, C, n)
    log = ev.PredictionLog(p, y)
    one = ev.ece(log, 1)
    assert one == pytest.approx(abs(log.accuracy() - log.confidence.mean()), abs=1e-12)
    perm = rng.permutation(n)
    assert ev.ece(ev.PredictionLog(p[perm], y[perm]), M) == pytest.approx(ev.ece(log, M), abs=1e-12)
    assert 0.0 <= ev.ece(log, M) <= 1.0


def test_classification_examples():
    p = np.eye(3)[[0, 1, 2, 1]]
    m = ev.classification_metrics(ev.PredictionLog(p, [0, 1, 2, 1]))
    assert (m["precision"], m["recall"], m["f1"], m["auc"], m["top1_error"]) == (1, 1, 1, 1, 0)
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]])
    m = ev.classification_metrics(ev.PredictionLog(probs, [0, 1, 0, 1]))
    assert m["per_class"][0]["precision"] == 0.5 and m["per_class"][0]["recall"] == 0.5
    # class 0 below: TP=1, FP=1, FN=0
    probs = np.array([[0.9, 0.1, 0.0], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1], [0.0, 0.2, 0.8]])
    m = ev.classification_metrics(ev.PredictionLog(probs, [0, 1, 1, 2]))
    c0 = m["per_class"][0]
    assert (c0["precision"], c0["recall"], c0["f1"]) == (0.5, 1.0, pytest.approx(2 / 3))


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(1)
    scores = rng.random(20000)
    assert abs(ev.auc_rank(scores, rng.random(20000) < 0.5) - 0.5) < 0.05
    assert ev.auc_rank([0.1, 0.2], [True, True]) is None
    assert ev.auc_rank([0.5, 0.5, 0.5], [True, False, False]) == 0.5


def test_absent_class_warns_and_is_excluded():
    probs = np.array([[0.9, 0.05, 0.05], [0.2, 0.7, 0.1]])
    with pytest.warns(UndefinedClassMetric):
        m = ev.classification_metrics(ev.PredictionLog(probs, [0, 1]))
    assert m["per_class"][2]["recall"] is None
    assert m["recall"] == 1.0 and m["precision"] == 1.0


@pytest.mark.filterwarnings("ignore::epass_lab.errors.UndefinedClassMetric")
def test_top5_caps_at_class_count():
    probs = np.array([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]])
    m = ev.classification_metrics(ev.PredictionLog(probs, [2, 0]))
    assert m["top1_error"] == 1.0 and m["top5_error"] == 0.0


@pytest.mark.filterwarnings("ignore::epass_lab.errors.UndefinedClassMetric")
def test_metrics_document(tmp_path):
    log = ev.PredictionLog(np.array([[0.8, 0.2], [0.4, 0.6]]), [0, 0])
    doc = ev.metrics_document(log)
    assert doc["accuracy"] == 0.5 and doc["n"] == 2 and doc["bins"] == 10
    ev.write_metrics(doc, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["ece"] == pytest.approx(doc["ece"])


def test_prediction_log_validation():
    with pytest.raises(ValueError):
        ev.PredictionLog(np.array([[0.5, 0.6]]), [0])
    with pytest.raises(ValueError):
        ev.PredictionLog(np.array([[0.5, 0.5]]), [0, 1])


@pytest.mark.parametrize("C", [2, 3])
def test_exhaustive_small_logs(C):
    # every multiset of up to 4 predictions over the alphabet; the acceptance
    # suite extends this to size 6
    count, worst = _oracles.check_all(C, max_size=4)
    assert count > 100 and worst < 1e-12
