import numpy as np
import pytest

from epass_lab import model
from epass_lab.errors import InvalidSpec, ShapeMismatch


def spec(P=1, **kw):
    return model.NetworkSpec(input_dim=2, num_classes=3, num_projectors=P, **kw)


def test_spec_validation():
    for bad in (dict(num_projectors=0), dict(proj_dim=1), dict(encoder_layers=(4, 0)),
                dict(encoder_layers=())):
        with pytest.raises(InvalidSpec):
            model.NetworkSpec(2, 3, **bad)
    with pytest.raises(InvalidSpec):
        model.init("not a spec", 0)


@pytest.mark.parametrize("P", [1, 2, 3, 5])
def test_param_count_closed_form(P):
    s = spec(P, encoder_layers=(7, 5), proj_hidden=6, proj_dim=4)
    state = model.init(s, 0)
    assert state.n_params() == model.param_count(s)
    hand = (2 * 7 + 7) + (7 * 5 + 5) + (5 * 3 + 3) + P * ((5 * 6 + 6) + (6 * 4 + 4))
    assert model.param_count(s) == hand


def test_overhead_is_twice_single_projector():
    s3, s1 = spec(3), spec(1)
    extra, frac = model.projector_overhead(s3)
    assert extra == model.param_count(s3) - model.param_count(s1) == 2 * model.projector_param_count(s1)
    assert frac < 0.05


def test_init_deterministic_and_heads_distinct():
    a, b = model.init(spec(3), 7), model.init(spec(3), 7)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.array_equal(a.params[f"proj.{i}.0.W"], a.params[f"proj.{j}.0.W"])
    assert a.projector_seeds == [[7, 1, k] for k in range(3)]


def test_init_bounds():
    s = spec(2)
    st = model.init(s, 3)
    W = st.params["enc.1.W"]
    bound = 1 / np.sqrt(W.shape[0])
    assert np.all(np.abs(W) <= bound)
    assert np.abs(W).max() > 0.9 * bound


def test_adding_heads_keeps_existing_weights():
    # encoder, classifier and head 0 do not depend on how many heads exist
    a, b = model.init(spec(1), 5), model.init(spec(4), 5)
    for k, v in a.params.items():
        assert np.array_equal(v, b.params[k])


def test_classify_contract():
    st = model.init(spec(1), 0)
    x = np.random.default_rng(0).normal(size=(6, 2))
    p = model.classify(st, x)
    assert p.shape == (6, 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    zero = model.ModelState(st.spec, {k: np.zeros_like(v) for k, v in st.params.items()}, 0)
    np.testing.assert_allclose(model.classify(zero, x), 1 / 3, rtol=0, atol=1e-15)
    with pytest.raises(ShapeMismatch):
        model.classify(st, np.ones((2, 3)))


def test_project_all():
    x = np.random.default_rng(1).normal(size=(4, 2))
    st4 = model.init(spec(4), 0)
    outs = model.project_all(st4, x)
    assert len(outs) == 4 and all(o.shape == (4, 16) for o in outs)
    assert not np.allclose(outs[0], outs[1])
    st1 = model.init(spec(1), 0)
    legacy = model.project(st1.params, model.encode(st1.params, st1.spec, x), 0)
    assert np.array_equal(model.project_all(st1, x)[0], legacy)
    assert np.array_equal(outs[0], legacy)


def test_ema_examples():
    st = model.init(spec(1), 0)
    for m, expect in ((0.0, "live"), (1.0, "shadow")):
        ema = model.EmaState({k: np.ones_like(v) for k, v in st.params.items()}, m)
        model.ema_update(ema, st)
        for k in st.params:
            ref = st.params[k] if expect == "live" else np.ones_like(st.params[k])
            assert np.array_equal(ema.params[k], ref)
    ema = model.EmaState({"w": np.array([1.0])}, 0.999)
    model.ema_update(ema, model.ModelState(None, {"w": np.array([0.0])}, 0))
    assert ema.params["w"][0] == pytest.approx(0.999, abs=1e-15)


def test_ema_shape_mismatch():
    ema = model.EmaState({"w": np.ones(2)}, 0.5)
    with pytest.raises(ShapeMismatch):
        model.ema_update(ema, model.ModelState(None, {"w": np.ones(3)}, 0))
    with pytest.raises(ShapeMismatch):
        model.ema_update(ema, model.ModelState(None, {"v": np.ones(2)}, 0))


@pytest.mark.parametrize("m", [0.0, 0.5, 0.9, 0.999, 1.0])
def test_ema_closed_form(m):
    rng = np.random.default_rng(2)
    x0, x = rng.normal(size=5), rng.normal(size=5)
    ema = model.EmaState({"w": x0.copy()}, m)
    live = model.ModelState(None, {"w": x}, 0)
    for t in range(1, 101):
        model.ema_update(ema, live)
        np.testing.assert_allclose(ema.params["w"], m ** t * x0 + (1 - m ** t) * x, rtol=0, atol=1e-9)


def test_ema_inference_does_not_touch_training_params():
    st = model.init(spec(2), 0)
    before = {k: v.copy() for k, v in st.params.items()}
    ema = model.EmaState.from_model(st)
    model.classify(ema.as_model(st.spec), np.ones((3, 2)))
    model.project_all(ema.as_model(st.spec), np.ones((3, 2)))
    assert all(np.array_equal(before[k], st.params[k]) for k in before)
    ema.params["cls.b"] += 1.0
    assert np.array_equal(before["cls.b"], st.params["cls.b"])
