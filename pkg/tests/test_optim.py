import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advden.errors import ConfigError, NonFiniteError
from advden.optim import AdaDelta, AdaDeltaState, adadelta_step, conv_fans, glorot_bound, glorot_uniform
from advden.tensor import Var


def test_glorot_bound_examples():
    assert glorot_bound(3, 3) == 1.0
    with pytest.raises(ConfigError):
        glorot_bound(0, 3)


@given(fan_in=st.integers(1, 500), fan_out=st.integers(1, 500), seed=st.integers(0, 2**31))
def test_glorot_values_within_bound(fan_in, fan_out, seed):
    w = glorot_uniform(fan_in, fan_out, seed)
    assert w.shape == (fan_out, fan_in)
    assert np.abs(w).max() <= glorot_bound(fan_in, fan_out)


def test_glorot_deterministic_and_variance():
    a, b = glorot_uniform(200, 300, 7), glorot_uniform(200, 300, 7)
    np.testing.assert_array_equal(a, b)
    # U(-g, g) has variance g^2 / 3 = 2 / (fan_in + fan_out)
    assert np.var(a) == pytest.approx(2 / 500, rel=0.02)


def test_conv_fans_include_kernel():
    assert conv_fans((128, 64, 3)) == (192, 384)
    assert conv_fans((150, 10)) == (10, 150)


def test_first_step_hand_value():
    p = np.zeros(1)
    st_ = AdaDeltaState.zeros_like(p, rho=0.95, eps=1e-6, weight_decay=0.0)
    adadelta_step(p, np.ones(1), st_)
    expected = -np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)
    assert p[0] == pytest.approx(expected, abs=1e-15)
    assert p[0] == pytest.approx(-0.004472, abs=1e-6)
    assert st_.acc_grad_sq[0] == pytest.approx(0.05)
    assert st_.acc_update_sq[0] == pytest.approx(0.05 * expected**2)


def test_zero_gradient_fixed_point():
    p = np.array([1.0, -2.0])
    st_ = AdaDeltaState.zeros_like(p)
    st_.acc_grad_sq[:] = [0.3, 0.4]
    st_.acc_update_sq[:] = [0.1, 0.2]
    adadelta_step(p, np.zeros(2), st_)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    np.testing.assert_allclose(st_.acc_grad_sq, [0.95 * 0.3, 0.95 * 0.4], rtol=1e-15)
    np.testing.assert_allclose(st_.acc_update_sq, [0.95 * 0.1, 0.95 * 0.2], rtol=1e-15)


def test_weight_decay_shrinks_parameter():
    p = np.ones(1)
    st_ = AdaDeltaState.zeros_like(p, weight_decay=5e-4)
    adadelta_step(p, np.zeros(1), st_)
    assert p[0] < 1.0
    assert st_.acc_grad_sq[0] == pytest.approx(0.05 * 5e-4**2)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8))
def test_accumulators_nonnegative(grads):
    p = np.zeros(1)
    st_ = AdaDeltaState.zeros_like(p)
    for g in grads:
        adadelta_step(p, np.array([g]), st_)
        assert st_.acc_grad_sq[0] >= 0 and st_.acc_update_sq[0] >= 0


def test_quadratic_convergence():
    target = np.array([3.0, -2.0, 0.5])
    p = np.zeros(3)
    st_ = AdaDeltaState.zeros_like(p)
    for _ in range(10_000):
        adadelta_step(p, p - target, st_)
    assert np.abs(p - target).max() < 1e-2


def test_nan_gradient_names_parameter():
    p = np.zeros(2)
    with pytest.raises(NonFiniteError, match="enc.conv0.weight"):
        adadelta_step(p, np.array([np.nan, 0.0]), AdaDeltaState.zeros_like(p), "enc.conv0.weight")


def test_state_validation():
    with pytest.raises(ConfigError) as exc:
        AdaDeltaState.zeros_like(np.zeros(1), rho=1.0)
    assert exc.value.key == "rho"


def test_optimizer_wrapper_updates_all():
    a, b = Var(np.ones(3), requires_grad=True), Var(np.ones((2, 2)), requires_grad=True)
    opt = AdaDelta({"a": a, "b": b}, weight_decay=0.0)
    opt.zero_grad()
    a.grad += 1.0
    opt.step()
    assert (a.values < 1).all()
    np.testing.assert_array_equal(b.values, 1.0)
