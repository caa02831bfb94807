import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kmclr import autograd as ag
from kmclr.errors import ConfigError, NonFiniteError
from kmclr.gradcheck import check_gradients
from kmclr.optim import Adam, ModelDims, ParameterSet, adam_step, init_params, xavier_uniform


def test_single_parameter_sigmoid_loss_gradient():
    rng = np.random.default_rng(0)
    w = ag.Tensor(rng.normal(size=(3, 1)), requires_grad=True, name="w")
    x = ag.Tensor(rng.normal(size=(1, 3)))
    assert check_gradients(lambda: ag.sigmoid(ag.matmul(x, w)), [w])["w"] < 1e-4


def test_first_adam_step_moves_by_lr_against_gradient():
    t = ag.Tensor(np.array([[1.0, -2.0]]), requires_grad=True, name="p")
    t.grad = np.array([[0.5, -3.0]])
    Adam().step([t], lr=0.01)
    np.testing.assert_allclose(t.value, [[0.99, -1.99]], atol=1e-7)
    assert t.grad is None


def test_decay_shrinks_norm_with_zero_gradient():
    t = ag.Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True, name="p")
    before = np.linalg.norm(t.value)
    t.grad = np.zeros_like(t.value)
    Adam().step([t], lr=0.1, weight_decay=0.01)
    assert np.linalg.norm(t.value) < before


def test_zero_gradient_no_decay_is_fixed_point():
    t = ag.Tensor(np.array([[1.0, -2.0]]), requires_grad=True, name="p")
    t.grad = np.zeros_like(t.value)
    Adam().step([t], lr=0.1)
    np.testing.assert_array_equal(t.value, [[1.0, -2.0]])


def test_non_finite_gradient_raises_with_name():
    t = ag.Tensor(np.ones((1, 2)), requires_grad=True, name="mul.user")
    t.grad = np.array([[np.nan, 0.0]])
    with pytest.raises(NonFiniteError, match="mul.user"):
        Adam().step([t], lr=0.1)


def test_adam_minimizes_quadratic():
    p = ParameterSet()
    p.add("x", np.array([[3.0, -4.0]]))
    opt = Adam()
    for _ in range(2000):
        ag.backward(ag.sq_norm(p["x"]))
        adam_step(p, opt, lr=0.05)
    assert np.linalg.norm(p["x"].value) < 1e-2


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 1000))
def test_xavier_bound(fan_in, fan_out, seed):
    w = xavier_uniform(np.random.default_rng(seed), (fan_in, fan_out))
    assert np.all(np.abs(w) <= math.sqrt(6.0 / (fan_in + fan_out)))


def test_init_is_deterministic_and_shaped():
    dims = ModelDims(5, 4, 7, 3, dim=8, layers=2)
    a, b = init_params(dims, seed=3), init_params(dims, seed=3)
    for n in a:
        np.testing.assert_array_equal(a[n].value, b[n].value)
    assert a["mul.Wl_user"].shape == (24, 8)
    assert a["kg.td.proj"].shape == (3, 8, 8)
    assert a["kg.att_W1"].shape == (24, 1)
    assert a["kg.sm.diag"].shape == (1, 8)
    c = init_params(dims, seed=4)
    assert not np.array_equal(a["mul.user"].value, c["mul.user"].value)


def test_init_rejects_bad_dims():
    with pytest.raises(ConfigError):
        init_params(ModelDims(2, 2, 2, 1, dim=0))
    with pytest.raises(ConfigError):
        init_params(ModelDims(2, 2, 2, 1, dim=4, layers=0))


def test_parameter_set_modules_and_state_roundtrip():
    p = init_params(ModelDims(3, 2, 4, 1, dim=4, layers=1))
    assert all(n.startswith("mul.") for n in p.names("mul"))
    assert all(n.startswith("kg.") for n in p.names("kg"))
    s = p.state()
    p["mul.user"].value += 1.0
    p.load_state(s)
    np.testing.assert_array_equal(p["mul.user"].value, s["mul.user"])
