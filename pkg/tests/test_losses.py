import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epass_lab import losses
from epass_lab import numcore as nc
from epass_lab.errors import DegenerateRunningMean, ShapeMismatch


def simplex(rng, n, c):
    p = rng.random((n, c)) + 1e-3
    return p / p.sum(axis=1, keepdims=True)


def unit(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def test_weights_validation():
    w = losses.LossWeights()
    assert (w.lambda_u, w.lambda_c, w.tau, w.tau_c, w.T) == (1.0, 1.0, 0.95, 0.8, 0.1)
    for bad in (dict(lambda_u=-1), dict(tau=0.0), dict(tau=1.5), dict(tau_c=1.2), dict(T=0)):
        with pytest.raises(ValueError):
            losses.LossWeights(**bad)


def test_supervised_examples():
    y = np.eye(3)
    assert losses.supervised_loss(y, y) == 0.0
    assert math.isclose(losses.supervised_loss(np.eye(10)[:4], np.full((4, 10), 0.1)), math.log(10),
                        rel_tol=1e-14)
    p = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert math.isclose(losses.supervised_loss(np.eye(2)[[0, 0]], p), math.log(2) / 2, rel_tol=1e-15)
    with pytest.raises(ShapeMismatch):
        losses.supervised_loss(np.eye(2), np.eye(3))


def test_distribution_align_examples():
    da = losses.DaState(2)
    p = np.array([[0.8, 0.2], [0.3, 0.7]])
    np.testing.assert_array_equal(losses.distribution_align(da, p), p)  # empty history: target
    da = losses.DaState(2)
    da.push(np.array([[0.8, 0.2]]))
    np.testing.assert_allclose(losses.distribution_align(da, np.array([[0.8, 0.2]])), [[0.5, 0.5]],
                               rtol=1e-15)


def test_distribution_align_window_and_update_order():
    da = losses.DaState(2, window=2)
    batches = [np.array([[0.9, 0.1]]), np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])]
    for b in batches:
        before = da.running_mean
        out = losses.distribution_align(da, b)
        ref = b * (0.5 / before)
        np.testing.assert_allclose(out, ref / ref.sum(axis=1, keepdims=True), rtol=1e-15)
    np.testing.assert_allclose(da.running_mean, [0.4, 0.6], rtol=1e-15)


def test_distribution_align_degenerate_warns():
    da = losses.DaState(2)
    da.push(np.array([[1.0, 0.0]]))
    with pytest.warns(DegenerateRunningMean):
        out = losses.distribution_align(da, np.array([[0.5, 0.5]]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


@given(st.integers(0, 10 ** 6), st.integers(2, 6))
def test_distribution_align_rows_stochastic(seed, c):
    rng = np.random.default_rng(seed)
    da = losses.DaState(c, window=3)
    for _ in range(5):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateRunningMean)
            out = losses.distribution_align(da, simplex(rng, 4, c))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_unsupervised_examples():
    p = np.full((3, 2), 0.5)
    loss, mask = losses.unsupervised_loss(p, p, 0.95)
    assert float(loss) == 0.0 and not mask.any()
    pw = np.array([[0.99, 0.01], [0.5, 0.5]])
    ps = np.array([[1.0, 0.0], [0.3, 0.7]])
    loss, mask = losses.unsupervised_loss(pw, ps, 0.95)
    assert float(loss) == 0.0 and mask.tolist() == [True, False]
    pw = np.array([[0.97, 0.01, 0.01, 0.01], [0.25] * 4])
    loss, _ = losses.unsupervised_loss(pw, np.full((2, 4), 0.25), 0.95)
    assert math.isclose(float(loss), math.log(4) / 2, rel_tol=1e-15)
    # soft targets use the distribution itself
    soft, _ = losses.unsupervised_loss(pw, np.full((2, 4), 0.25), 0.95, hard=False)
    assert math.isclose(float(soft), math.log(4) / 2, rel_tol=1e-15)
    with pytest.raises(ShapeMismatch):
        losses.unsupervised_loss(np.eye(2), np.eye(3), 0.5)


@given(st.integers(0, 10 ** 6))
def test_unsupervised_monotone_in_tau(seed):
    rng = np.random.default_rng(seed)
    pw, ps = simplex(rng, 8, 3) ** 3, simplex(rng, 8, 3)
    pw /= pw.sum(axis=1, keepdims=True)
    vals = [float(losses.unsupervised_loss(pw, ps, t)[0]) for t in np.linspace(0.34, 1.0, 12)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert min(vals) >= 0


def test_simmatch_examples():
    one = np.eye(8)[[2]]
    assert float(losses.simmatch_contrastive(one, one)) == 0.0
    assert math.isclose(float(losses.simmatch_contrastive(one, np.full((1, 8), 1 / 8))),
                        math.log(8), rel_tol=1e-15)
    qw = np.eye(8)[[2, 3]]
    qs = np.vstack([np.eye(8)[2], np.full(8, 1 / 8)])
    assert math.isclose(float(losses.simmatch_contrastive(qw, qs)), math.log(8) / 2, rel_tol=1e-15)


def test_simmatch_weak_side_is_constant():
    rng = np.random.default_rng(0)
    qw, qs = simplex(rng, 3, 5), simplex(rng, 3, 5)
    with nc.Tape() as tape:
        s = tape.watch(qs)
        loss = losses.simmatch_contrastive(qw, s)
        tape.backward(loss)
    np.testing.assert_allclose(s.grad, -qw / qs / 3)


def test_pseudo_label_graph():
    q = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]])
    W = losses.pseudo_label_graph(q, 0.7)
    raw = q @ q.T
    assert raw[0, 1] >= 0.7 and raw[0, 2] < 0.7
    expected = np.array([[1, raw[0, 1], 0], [raw[1, 0], 1, 0], [0, 0, 1]])
    np.testing.assert_allclose(W, expected / expected.sum(axis=1, keepdims=True), rtol=1e-15)
    # just below the threshold is cut
    tau_c = raw[0, 1]
    W = losses.pseudo_label_graph(q, np.nextafter(tau_c, 1.0))
    assert W[0, 1] == 0.0
    assert np.array_equal(losses.pseudo_label_graph(q, 1.0), np.eye(3))
    with pytest.raises(ShapeMismatch):
        losses.pseudo_label_graph(q[:1], 0.5)


def test_embedding_graph_definition():
    rng = np.random.default_rng(1)
    z, zp = unit(rng, 4, 3), unit(rng, 4, 3)
    T = 0.2
    W = np.exp(z @ z.T / T)
    np.fill_diagonal(W, np.exp(np.sum(z * zp, axis=1) / T))
    Wz = losses.embedding_graph(z, zp, T)
    np.testing.assert_allclose(Wz, W / W.sum(axis=1, keepdims=True), rtol=1e-12)
    with pytest.raises(ShapeMismatch):
        losses.embedding_graph(z, zp[:3], T)


@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0), st.floats(0.05, 2.0))
def test_graphs_row_stochastic(seed, tau_c, T):
    rng = np.random.default_rng(seed)
    Wq, Wz = losses.comatch_graphs(simplex(rng, 5, 3), unit(rng, 5, 4), unit(rng, 5, 4), tau_c, T)
    np.testing.assert_allclose(Wq.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(Wz.sum(axis=1), 1.0, atol=1e-9)


def test_comatch_identity_and_threshold_one():
    assert float(losses.comatch_contrastive(np.eye(4), np.eye(4))) == 0.0
    rng = np.random.default_rng(2)
    z, zp = unit(rng, 4, 3), unit(rng, 4, 3)
    Wq, Wz = losses.comatch_graphs(simplex(rng, 4, 2), z, zp, 1.0, 0.5)
    # only the self-pair term remains
    assert math.isclose(float(losses.comatch_contrastive(Wq, Wz)), float(np.mean(-np.log(np.diag(Wz)))),
                        rel_tol=1e-14)


@pytest.mark.parametrize("seed", range(50))
def test_comatch_decomposition(seed):
    rng = np.random.default_rng(seed)
    z, zp = unit(rng, 4, 5), unit(rng, 4, 5)
    Wq = simplex(rng, 4, 4)
    T = rng.uniform(0.1, 1.0)
    direct = float(losses.comatch_contrastive(Wq, losses.embedding_graph(z, zp, T)))
    assert abs(direct - losses.comatch_contrastive_decomposed(Wq, z, zp, T)) < 1e-9


def test_total_loss():
    w = losses.LossWeights(0.0, 0.0)
    assert losses.total_loss(1.5, 7.0, 9.0, w) == 1.5
    assert losses.total_loss(1.0, 2.0, 3.0, losses.LossWeights()) == 6.0
    assert losses.total_loss(1.0, 2.0, 3.0, losses.LossWeights(0.5, 2.0)) == 8.0


@given(st.integers(0, 10 ** 6))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p, q = simplex(rng, 4, 3), simplex(rng, 4, 3)
    assert losses.supervised_loss(np.eye(3)[rng.integers(0, 3, 4)], p) >= 0
    assert float(losses.unsupervised_loss(p, q, 0.4)[0]) >= 0
    assert float(losses.simmatch_contrastive(p, q)) >= 0
    Wq, Wz = losses.comatch_graphs(p, unit(rng, 4, 3), unit(rng, 4, 3), 0.3, 0.5)
    assert float(losses.comatch_contrastive(Wq, Wz)) >= 0


def test_pseudo_targets_hard_one_hot():
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    t, m = losses.pseudo_targets(p, 0.7)
    assert t.tolist() == [[0.0, 1.0], [1.0, 0.0]] and m.tolist() == [True, False]


# --- gradients of the full objective ----------------------------------------------

from _micro import accepted_instances  # noqa: E402


@pytest.mark.parametrize("terms", [("ls",), ("lu",), ("lc_sim",), ("lc_co",), ("ls", "lu", "lc_sim", "lc_co")])
def test_gradient_each_component(terms):
    for _, (names, arrays, loss_fn, value_fn, _) in accepted_instances(8, terms=terms):
        assert nc.grad_check(loss_fn, arrays, 3e-5, value_fn) < 1e-4


def test_every_parameter_group_receives_gradient():
    names, arrays, loss_fn, _, _ = accepted_instances(1)[0][1]
    _, grads = loss_fn(arrays)
    got = {n.split(".")[0] + "." + n.split(".")[1] for n, g in zip(names, grads) if np.abs(g).max() > 0}
    assert {"enc.0", "enc.1", "cls.W", "cls.b", "proj.0", "proj.1"} <= got
