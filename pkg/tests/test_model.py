import numpy as np
import pytest

from chatty import autodiff as ad
from chatty import model as M
from chatty.errors import ParameterError, ShapeError


@pytest.fixture
def small():
    return M.init(3, 4, (8, 6), disc_hidden=5, seed=1)


def test_zero_weight_model_outputs_biases(small):
    m = small.clone()
    for k in m.params:
        if ".W" in k:
            m.params[k][:] = 0.0
    m.params["C.b"][:] = [1, 2, 3, 4]
    m.params["T1.b"][:] = [0.5, 0, 0, 0]
    m.params["T2.b"][:] = [0, 0.5, 0, 0]
    b = M.forward(m, np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_allclose(b.o1.value, np.tile([1.5, 2, 3, 4], (5, 1)))
    np.testing.assert_allclose(b.o2.value, np.tile([1, 2.5, 3, 4], (5, 1)))
    np.testing.assert_allclose(b.interp_logits.value, np.tile([1.25, 2.25, 3, 4], (5, 1)))


def test_forward_bundle_invariants(small):
    x = np.random.default_rng(2).normal(size=(7, 3))
    b = M.forward(small, x)
    np.testing.assert_allclose(b.o1.value - b.logits_C.value, b.t1.value, atol=1e-15)
    np.testing.assert_allclose(b.o2.value - b.logits_C.value, b.t2.value, atol=1e-15)
    np.testing.assert_allclose(b.interp_logits.value, 0.5 * b.o1.value + 0.5 * b.o2.value, atol=1e-15)
    assert b.features.value.shape == (7, 6)
    assert np.all((b.disc_out.value > 0) & (b.disc_out.value < 1))


def test_additivity_is_exact(small):
    b = M.forward(small, np.random.default_rng(3).normal(size=(4, 3)))
    assert np.array_equal(b.o1.value, b.logits_C.value + b.t1.value)
    assert np.array_equal(b.o2.value, b.logits_C.value + b.t2.value)


def test_interp_midpoint():
    t = ad.Tape()
    o1, o2 = t.constant([[2.0, 0.0]]), t.constant([[0.0, 2.0]])
    out = ad.add(ad.scale(o1, 0.5), ad.scale(o2, 0.5))
    np.testing.assert_array_equal(out.value, [[1.0, 1.0]])


def test_single_transport_mode():
    m = M.init(3, 2, (8,), mode="single", seed=0)
    assert m.lam == 1.0
    assert "T2.W" not in m.params
    b = M.forward(m, np.ones((3, 3)))
    assert b.t2 is None and b.o2 is None
    assert b.interp_logits is b.o1


def test_swap_heads_symmetry():
    m = M.init(3, 3, (8,), lam=0.3, seed=4)
    s = m.clone()
    s.lam = 0.7
    s.params["T1.W"], s.params["T2.W"] = m.params["T2.W"].copy(), m.params["T1.W"].copy()
    s.params["T1.b"], s.params["T2.b"] = m.params["T2.b"].copy(), m.params["T1.b"].copy()
    x = np.random.default_rng(5).normal(size=(6, 3))
    np.testing.assert_allclose(M.forward(m, x).interp_logits.value, M.forward(s, x).interp_logits.value,
                               atol=1e-13)


def test_logit_disc_input_flag(small):
    m = small.clone()
    m.disc_input = "logits"
    b = M.forward(m, np.ones((2, 3)))
    np.testing.assert_array_equal(b.disc_in.value, b.interp_logits.value)
    b2 = M.forward(small, np.ones((2, 3)))
    np.testing.assert_allclose(b2.disc_in.value.sum(axis=1), 1.0)


def test_predict_argmax_and_ties():
    assert np.argmax([0.1, 0.9, 0.2]) == 1
    m = M.init(2, 2, (4,), seed=0)
    for k in m.params:
        m.params[k][:] = 0.0
    # all logits tie -> lowest index
    np.testing.assert_array_equal(M.predict(m, np.ones((3, 2))), [0, 0, 0])
    m.params["C.b"][:] = [0.1, 0.9]
    np.testing.assert_array_equal(M.predict(m, np.ones((3, 2))), [1, 1, 1])


def test_predict_invariant_to_common_offsets(small):
    x = np.random.default_rng(6).normal(size=(20, 3))
    base = M.predict(small, x)
    rng = np.random.default_rng(7)
    for _ in range(25):
        shifted = small.clone()
        off = rng.normal(size=(1, 4)) * 10
        # a constant added to both o1 and o2 rows enters through the head biases
        shifted.params["T1.b"] = shifted.params["T1.b"] + off
        shifted.params["T2.b"] = shifted.params["T2.b"] + off
        interp = M.interp_logits(shifted, x)
        np.testing.assert_allclose(interp, M.interp_logits(small, x) + off, atol=1e-12)
        # argmax of a per-row uniform shift is unchanged
        c = rng.normal() * 10
        assert np.array_equal(np.argmax(M.interp_logits(small, x) + c, axis=1), base)


def test_input_dimension_mismatch(small):
    with pytest.raises(ShapeError):
        M.forward(small, np.ones((2, 5)))


def test_init_determinism_and_zero_biases():
    a, b = M.init(4, 3, seed=9), M.init(4, 3, seed=9)
    assert list(a.params) == list(b.params)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
        if ".b" in k:
            assert not a.params[k].any()
    c = M.init(4, 3, seed=10)
    assert not np.array_equal(a.params["G.W0"], c.params["G.W0"])


def test_transport_heads_start_ten_times_smaller():
    stds_c, stds_t = [], []
    for seed in range(1000):
        m = M.init(2, 3, (4,), disc_hidden=2, seed=seed)
        stds_c.append(m.params["C.W"].ravel())
        stds_t.append(m.params["T1.W"].ravel())
    ratio = np.std(np.concatenate(stds_t)) / np.std(np.concatenate(stds_c))
    assert abs(ratio - 0.1) < 0.01


def test_init_rejects_bad_widths():
    for bad in [dict(hidden=(0, 4)), dict(hidden=(-3,)), dict(disc_hidden=0)]:
        with pytest.raises(ParameterError):
            M.init(2, 3, **{"hidden": (4,), **bad})
    with pytest.raises(ParameterError):
        M.init(2, 1)


def test_lambda_range_in_dual_mode():
    with pytest.raises(ParameterError):
        M.init(2, 2, (4,), lam=1.0)


def test_checkpoint_round_trip_is_exact(tmp_path, small):
    p = tmp_path / "ckpt.json"
    M.save(small, p)
    back = M.load(p)
    assert back.spec() == small.spec()
    for k in small.params:
        assert back.params[k].dtype == np.float64
        assert back.params[k].tobytes() == small.params[k].tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        M.load(p)
