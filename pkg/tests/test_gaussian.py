import math

import numpy as np
import pytest
from scipy.linalg import expm

from hypoheat.gaussian import (
    KalmanError,
    LQOperator,
    SingularGramianError,
    gramian_G,
    gramian_gamma,
    kalman_ok,
    kernel_eval,
    kolmogorov_operator,
    mat_exp,
    rescale_residual,
)

_ZERO = np.zeros(2)


def test_kalman_detects_controllability():
    assert kalman_ok(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1.0, 0.0]))
    assert not kalman_ok(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([1.0, 0.0]))
    assert not kalman_ok(np.zeros((2, 2)), np.array([1.0, 1.0]))


def test_lqoperator_rejects_uncontrollable_pair():
    with pytest.raises(KalmanError):
        LQOperator(np.zeros((2, 2)), np.array([1.0, 0.0]))


@pytest.mark.parametrize(
    "A",
    [
        np.array([[0.0, 0.0], [1.0, 0.0]]),
        np.array([[0.3, -0.2], [0.5, 0.1]]),
        np.array([[0.0, -1.0], [1.0, 0.0]]),
        np.array([[1.0, 0.0], [0.3, -2.0]]),
        np.array([[0.5, 0.25], [-0.25, 0.5]]),
    ],
)
@pytest.mark.parametrize("t", [0.1, 1.0, -0.7, 2.5])
def test_mat_exp_against_scipy(A, t):
    # scipy's Pade expm as the oracle for the closed-form case split
    got = mat_exp(A, t)
    want = expm(t * A)
    assert np.allclose(got, want, rtol=1e-12, atol=1e-13)


def test_kolmogorov_gramians_closed_form():
    for S in (1.0, -1.0, 2.0, 0.5):
        op = kolmogorov_operator(S)
        assert op.nilpotent
        for t in np.linspace(0.1, 2.0, 10):
            G = gramian_G(op, t)
            want = np.array(
                [[t, S * t * t / 2.0], [S * t * t / 2.0, S * S * t ** 3 / 3.0]]
            )
            assert np.allclose(G, want, rtol=1e-13, atol=1e-15)


def test_gramian_against_quadrature_oracle():
    # brute-force Riemann integral of exp(-A tau) b b* exp(-A* tau)
    op = LQOperator(np.array([[0.2, -0.4], [0.8, 0.1]]), np.array([0.9, 0.2]))
    t = 1.3
    taus = np.linspace(0, t, 4001)
    vals = np.empty((len(taus), 2, 2))
    for i, tau in enumerate(taus):
        v = expm(-tau * op.A) @ op.b
        vals[i] = np.outer(v, v)
    acc = np.trapezoid(vals, taus, axis=0)
    assert np.allclose(gramian_gamma(op, t), acc, rtol=1e-7, atol=1e-9)


def test_det_gamma_equals_det_G():
    ops = [
        kolmogorov_operator(1.0),
        kolmogorov_operator(-1.0),
        kolmogorov_operator(2.5),
        LQOperator(np.array([[0.0, -0.3], [0.7, 0.0]]), np.array([1.0, 0.1])),
        LQOperator(np.array([[0.1, 0.2], [0.5, -0.1]]), np.array([0.3, 1.0])),
    ]
    for op in ops:
        for t in np.linspace(0.1, 2.0, 10):
            dg = np.linalg.det(gramian_gamma(op, t))
            dG = np.linalg.det(gramian_G(op, t))
            # equality holds exactly for trace-free A; in general the ratio
            # is exp(2 t tr A)
            want = dg * math.exp(2.0 * t * np.trace(op.A))
            assert dG == pytest.approx(want, rel=1e-11)
            tr = np.trace(op.A)
            if tr == 0.0:
                assert dG == pytest.approx(dg, rel=1e-12)


def test_kernel_diagonal_matches_closed_form():
    op = kolmogorov_operator(1.0)
    for t in (0.25, 0.5, 1.0, 2.0):
        got = kernel_eval(op, t, _ZERO, _ZERO)
        want = math.sqrt(12.0) / (2.0 * math.pi * t * t)
        assert got == pytest.approx(want, rel=1e-13)


def test_kernel_is_a_probability_density():
    op = kolmogorov_operator(1.0)
    t = 0.7
    xs = np.linspace(-5, 5, 301)
    ys = np.linspace(-3, 3, 301)
    total = 0.0
    for x in xs:
        row = np.array([kernel_eval(op, t, _ZERO, np.array([x, y])) for y in ys])
        total += np.trapezoid(row, ys)
    total *= xs[1] - xs[0]
    assert total == pytest.approx(1.0, abs=1e-6)


def test_kernel_requires_positive_time():
    op = kolmogorov_operator(1.0)
    with pytest.raises(SingularGramianError):
        kernel_eval(op, 0.0, _ZERO, _ZERO)


def test_rescale_residual_vanishes():
    worst = 0.0
    for t in np.linspace(0.2, 1.4, 5):
        for eps in np.linspace(0.2, 1.0, 5):
            for x1 in np.linspace(-0.8, 0.8, 5):
                worst = max(
                    worst,
                    rescale_residual(t, eps, np.array([x1, 0.3]), np.array([0.1, -0.2])),
                )
    assert worst < 1e-10


def test_rescale_residual_rejects_bad_arguments():
    with pytest.raises(ValueError):
        rescale_residual(-1.0, 0.5, _ZERO, _ZERO)
    with pytest.raises(ValueError):
        rescale_residual(1.0, 1.5, _ZERO, _ZERO)
