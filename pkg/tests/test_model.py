from math import cos, pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqml import model as M
from dqml.datasets import chsh_inputs

TSIRELSON = cos(pi / 8) ** 2


def test_expectation_examples():
    unit = M.WeightVector.parity()
    assert M.expectation([0.25] * 4, unit) == 0
    assert M.expectation([0.5, 0, 0, 0.5], unit) == 1.0
    assert np.isclose(M.expectation([1, 0, 0, 0], [0.3, -0.3, -0.3, 0.3]), 0.3)
    batch = M.expectation(np.array([[1, 0, 0, 0], [0, 1, 0, 0]]), unit)
    assert np.allclose(batch, [1, -1])


def test_weight_vector_modes():
    assert M.WeightVector.parity(2.0, trainable=True).scale == 2.0
    assert np.allclose(M.WeightVector.free().values, [1, -1, -1, 1])
    with pytest.raises(ValueError):
        M.WeightVector("parity_trainable", [1, 1, 1, 1])
    with pytest.raises(ValueError):
        M.WeightVector("parity_trainable", [-1, 1, 1, -1])
    with pytest.raises(ValueError):
        M.WeightVector("parity_fixed_unit", [2, -2, -2, 2])
    with pytest.raises(ValueError):
        M.WeightVector("banana", [1, -1, -1, 1])


def test_predict_tie_break():
    assert M.predict(0.2) == 1 and M.predict(-1e-9) == -1 and M.predict(0.0) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.floats(0.01, 50))
def test_predict_invariant_to_parity_scale(p, scale):
    p = np.array(p) + 1e-3
    p /= p.sum()
    e1 = M.expectation(p, M.WeightVector.parity())
    e2 = M.expectation(p, M.WeightVector.parity(scale, trainable=True))
    assert np.isclose(e2, scale * e1)
    if abs(e1) > 1e-12:
        assert M.predict(e1) == M.predict(e2)


def test_loss_product_examples():
    assert M.loss_product([1], [0.5])[0] == -0.5
    assert M.loss_product([1, -1], [0.8, 0.8])[0] == 0
    inputs = chsh_inputs()
    ref = M.analytic_chsh_reference()
    # at the optimum every input has L E = 1/sqrt2
    labels = np.array([i.label for i in inputs], dtype=float)
    E = np.array([i.label * (-1) ** (i.s1 * i.t1) * ref[i.s1, i.t1] for i in inputs])
    assert np.isclose(M.loss_product(labels, E)[0], -1 / sqrt(2))


def test_loss_mse_examples():
    assert M.loss_mse([1], [1])[0] == 0
    assert M.loss_mse([1], [0])[0] == 1
    assert M.loss_mse([-1], [1])[0] == 4


@pytest.mark.parametrize("fn", [M.loss_product, M.loss_mse, M.accuracy])
def test_empty_batch_rejected(fn):
    with pytest.raises(ValueError):
        fn([], [])


@pytest.mark.parametrize("fn", [M.loss_product, M.loss_mse])
def test_loss_gradients_match_finite_difference(fn):
    rng = np.random.default_rng(0)
    labels = rng.choice([-1.0, 1.0], 7)
    E = rng.normal(size=7)
    _, g = fn(labels, E)
    h = 1e-6
    fd = [(fn(labels, E + h * e)[0] - fn(labels, E - h * e)[0]) / (2 * h) for e in np.eye(7)]
    assert np.allclose(g, fd, atol=1e-8)


def test_accuracy_examples():
    assert M.accuracy([1, -1], [0.3, -0.1]) == 1.0
    assert M.accuracy([1, 1, 1, 1], [1, -1, 1, -1]) == 0.5
    labels = np.ones(16)
    E = np.r_[np.ones(12), -np.ones(4)]
    assert M.accuracy(labels, E) == 0.75


def test_chsh_success_examples():
    assert M.chsh_success(1.0, 1) == 1.0
    assert M.chsh_success(0.0, 1) == 0.5
    assert np.isclose(M.chsh_success(1 / sqrt(2), 1), 0.85355, atol=1e-5)
    assert M.chsh_success(2.0, -1, omega_scale=2.0) == 0.0
    assert M.chsh_success(1 + 1e-12, 1) == 1.0
    with pytest.raises(ValueError):
        M.chsh_success(0.5, 1, omega_scale=0)
    with pytest.raises(ValueError):
        M.chsh_success(1.1, 1)


def test_chsh_correlator_examples():
    r = 1 / sqrt(2)
    S, p = M.chsh_correlator(r, r, r, -r)
    assert np.isclose(S, 2 * sqrt(2)) and np.isclose(p, TSIRELSON)
    assert M.chsh_correlator(1, 1, 0, 0)[1] == 0.75
    assert M.chsh_correlator(0, 0, 0, 0) == (0.0, 0.5)
    with pytest.raises(ValueError):
        M.chsh_correlator(1.5, 0, 0, 0)


def test_analytic_reference():
    ref = M.analytic_chsh_reference()
    assert np.isclose(ref[0, 0], 1 / sqrt(2)) and np.isclose(ref[1, 1], -1 / sqrt(2))
    S, _ = M.chsh_correlator(*ref.ravel())
    assert np.isclose(S, 2 * sqrt(2))


def test_mean_success_at_reference_is_tsirelson():
    ref = M.analytic_chsh_reference()
    inputs = chsh_inputs()
    succ = [M.chsh_success(i.label * (-1) ** (i.s1 * i.t1) * ref[i.s1, i.t1], i.label) for i in inputs]
    assert abs(np.mean(succ) - TSIRELSON) < 1e-12
