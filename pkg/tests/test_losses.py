import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_minimizer
from disco.losses import (
    LossModel,
    Objective,
    full_gradient,
    hessian_vec,
    loss_derivative,
    loss_second_derivative,
    loss_value,
)
from disco.synthetic import make_classification

LOSSES = list(LossModel)


def test_loss_value_worked_examples():
    assert loss_value("quadratic", 0.0, 1.0) == 1.0
    assert loss_value("logistic", 0.0, 1.0) == pytest.approx(math.log(2.0), rel=1e-15)
    assert loss_value("squared-hinge", 2.0, 1.0) == 0.0


def test_second_derivative_worked_examples():
    assert np.all(loss_second_derivative("quadratic", np.linspace(-5, 5, 11), 1.0) == 2.0)
    assert loss_second_derivative("logistic", 0.0, 1.0) == 0.25


def test_logistic_curvature_far_tail_matches_extended_precision():
    got = float(loss_second_derivative("logistic", 50.0, 1.0))
    mpmath.mp.dps = 60
    e = mpmath.exp(-50)
    want = float(e / (1 + e) ** 2)
    assert 0.0 < got < 1e-20
    assert got == pytest.approx(want, rel=1e-13)


def test_logistic_kernels_survive_huge_margins():
    m = np.array([-1e4, -800.0, 800.0, 1e4])
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        vals = loss_value("logistic", m, 1.0)
        d1 = loss_derivative("logistic", m, 1.0)
        d2 = loss_second_derivative("logistic", m, 1.0)
    assert np.all(np.isfinite(vals)) and np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))
    assert vals[0] == pytest.approx(1e4)
    assert vals[-1] == 0.0


def test_squared_hinge_kink_counts_as_inactive():
    assert loss_second_derivative("squared-hinge", 1.0, 1.0) == 0.0
    assert loss_second_derivative("squared-hinge", 0.999, 1.0) == 2.0


def test_self_concordance_constants():
    assert LossModel.QUADRATIC.self_concordance == 0.0
    assert LossModel.SQUARED_HINGE.self_concordance == 0.0
    assert LossModel.LOGISTIC.self_concordance == 1.0


def test_parse_accepts_aliases_and_rejects_unknown():
    assert LossModel.parse("Squared_Hinge") is LossModel.SQUARED_HINGE
    with pytest.raises(ValueError):
        LossModel.parse("hinge")


@settings(max_examples=200, deadline=None)
@given(
    loss=st.sampled_from(LOSSES),
    margin=st.floats(-8, 8),
    label=st.sampled_from([-1.0, 1.0, 0.3, -2.5]),
)
def test_second_derivative_matches_numeric(loss, margin, label):
    if loss is LossModel.SQUARED_HINGE and abs(label - margin) < 1e-2:
        return  # central differences straddle the kink
    # h balances rounding (~eps*phi/h^2) against truncation (~h^2*phi''''/12)
    h = 1e-3
    num = (loss_value(loss, margin + h, label) - 2 * loss_value(loss, margin, label)
           + loss_value(loss, margin - h, label)) / h ** 2
    ana = loss_second_derivative(loss, margin, label)
    assert ana >= 0.0
    assert abs(num - ana) <= 1e-5 * max(abs(ana), 1e-3)


@settings(max_examples=100, deadline=None)
@given(loss=st.sampled_from(LOSSES), margin=st.floats(-30, 30), label=st.sampled_from([-1.0, 1.0]))
def test_first_derivative_matches_numeric(loss, margin, label):
    if loss is LossModel.SQUARED_HINGE and abs(label - margin) < 1e-3:
        return
    h = 1e-6
    num = (loss_value(loss, margin + h, label) - loss_value(loss, margin - h, label)) / (2 * h)
    assert loss_derivative(loss, margin, label) == pytest.approx(num, rel=1e-6, abs=1e-8)


def _random_instance(rng, n, d):
    X = rng.standard_normal((d, n))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return X, y


def test_gradient_closed_forms_at_zero():
    rng = np.random.default_rng(0)
    X, y = _random_instance(rng, 15, 4)
    w = np.zeros(4)
    n = 15
    g_q = full_gradient(Objective("quadratic", 0.1), X, y, w)
    np.testing.assert_allclose(g_q, -(2.0 / n) * X @ y, rtol=1e-14)
    g_l = full_gradient(Objective("logistic", 0.1), X, y, w)
    np.testing.assert_allclose(g_l, -(1.0 / (2 * n)) * X @ y, rtol=1e-14)


@pytest.mark.parametrize("loss", [m.value for m in LOSSES])
def test_gradient_matches_central_differences(loss):
    rng = np.random.default_rng(3)
    X, y = _random_instance(rng, 20, 5)
    obj = Objective(loss, 0.05)
    w = 0.3 * rng.standard_normal(5)
    g = obj.gradient(X, y, w)
    h = 1e-6
    num = np.array([(obj.value(X, y, w + h * e) - obj.value(X, y, w - h * e)) / (2 * h) for e in np.eye(5)])
    assert np.linalg.norm(num - g) <= 1e-6 * np.linalg.norm(g)


def test_hessian_vec_trivial_cases():
    rng = np.random.default_rng(1)
    X, y = _random_instance(rng, 6, 6)
    obj = Objective("logistic", 0.2)
    w = rng.standard_normal(6)
    assert np.all(hessian_vec(obj, X, y, w, np.zeros(6)) == 0.0)
    # quadratic loss on the identity design, lambda -> tiny: H = (2/n) I + lam I
    obj_q = Objective("quadratic", 1e-300)
    u = rng.standard_normal(6)
    np.testing.assert_allclose(obj_q.hessian_vec(np.eye(6), y, w, u), (2.0 / 6) * u, rtol=1e-15)


@pytest.mark.parametrize("loss", [m.value for m in LOSSES])
def test_hessian_vec_matches_explicit_outer_products(loss):
    rng = np.random.default_rng(4)
    X, y = _random_instance(rng, 30, 8)
    lam = 0.03
    obj = Objective(loss, lam)
    w = 0.5 * rng.standard_normal(8)
    u = rng.standard_normal(8)
    coef = loss_second_derivative(loss, X.T @ w, y)
    H = lam * np.eye(8)
    for i in range(30):
        H += coef[i] * np.outer(X[:, i], X[:, i]) / 30
    np.testing.assert_allclose(obj.hessian_vec(X, y, w, u), H @ u, rtol=1e-10, atol=1e-12)


def test_hessian_vec_subset_uses_subset_size():
    rng = np.random.default_rng(5)
    X, y = _random_instance(rng, 12, 3)
    obj = Objective("logistic", 0.1)
    w, u = rng.standard_normal(3), rng.standard_normal(3)
    idx = np.array([1, 4, 7])
    want = obj.hessian_vec(X[:, idx], y[idx], w, u)
    np.testing.assert_allclose(obj.hessian_vec(X, y, w, u, sample_subset=idx), want, rtol=1e-14)
    with pytest.raises(ValueError):
        obj.hessian_vec(X, y, w, u, sample_subset=[])
    with pytest.raises(ValueError):
        obj.hessian_vec(X, y, w, u, sample_subset=[12])


def test_dimension_mismatch_raises():
    obj = Objective("quadratic", 1.0)
    X = np.ones((3, 4))
    with pytest.raises(ValueError):
        obj.gradient(X, np.ones(4), np.ones(2))
    with pytest.raises(ValueError):
        obj.value(X, np.ones(5), np.ones(3))


def test_lambda_must_be_positive():
    with pytest.raises(ValueError):
        Objective("logistic", 0.0)


@settings(max_examples=60, deadline=None)
@given(
    loss=st.sampled_from(LOSSES),
    seed=st.integers(0, 10_000),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
)
def test_hessian_vec_is_linear(loss, seed, a, b):
    rng = np.random.default_rng(seed)
    X, y = _random_instance(rng, 10, 4)
    obj = Objective(loss, 0.1)
    w, u1, u2 = rng.standard_normal((3, 4))
    lhs = obj.hessian_vec(X, y, w, a * u1 + b * u2)
    rhs = a * obj.hessian_vec(X, y, w, u1) + b * obj.hessian_vec(X, y, w, u2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=100, deadline=None)
@given(loss=st.sampled_from(LOSSES), seed=st.integers(0, 10_000), lam=st.floats(1e-6, 10.0))
def test_strong_convexity_lower_bound(loss, seed, lam):
    rng = np.random.default_rng(seed)
    X, y = _random_instance(rng, 9, 5)
    obj = Objective(loss, lam)
    w, u = rng.standard_normal((2, 5)) * 3
    uHu = float(u @ obj.hessian_vec(X, y, w, u))
    assert uHu >= lam * float(u @ u) * (1 - 1e-12)


@pytest.mark.parametrize("loss", [m.value for m in LOSSES])
def test_gradient_vanishes_at_dense_minimizer(loss):
    ds = make_classification(40, 6, seed=2)
    X = ds.X.toarray()
    w_star = oracle_minimizer(loss, X, ds.y, 0.05)
    assert np.linalg.norm(Objective(loss, 0.05).gradient(X, ds.y, w_star)) < 1e-8
