import math

import numpy as np
import pytest

from hypoheat.gauss_algebra import (
    DegenerateTimeError,
    Gaussian,
    OrderOverflowError,
    ScaledGaussian,
    central_moment,
    central_moment_table,
    lemma31_split,
    polynomial_expectation,
    product,
)
from hypoheat.gaussian import kernel_eval, kolmogorov_operator


def test_gaussian_requires_positive_definite_cov():
    with pytest.raises(ValueError):
        Gaussian(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_gaussian_density_normalizes():
    g = Gaussian(np.array([0.3, -0.1]), np.array([[0.5, 0.2], [0.2, 0.8]]))
    xs = np.linspace(-6, 6, 241)
    grid = np.array([[g.density(np.array([a, b])) for b in xs] for a in xs])
    total = np.trapezoid(np.trapezoid(grid, xs, axis=1), xs)
    assert total == pytest.approx(1.0, abs=1e-7)


def test_scaled_gaussian_density():
    g = Gaussian(np.zeros(2), np.eye(2))
    sg = ScaledGaussian(math.log(3.0), g)
    v = np.array([0.4, -1.2])
    assert sg.density(v) == pytest.approx(3.0 * g.density(v), rel=1e-14)


def test_product_identity_pointwise():
    rng = np.random.default_rng(5)
    for _ in range(25):
        a_mean = rng.normal(size=2)
        b_mean = rng.normal(size=2)
        Ma = rng.normal(size=(2, 2))
        Mb = rng.normal(size=(2, 2))
        a_prec = Ma @ Ma.T + 0.3 * np.eye(2)
        b_prec = Mb @ Mb.T + 0.3 * np.eye(2)
        c_mean, c_prec, log_const = product(a_mean, a_prec, b_mean, b_prec)
        ga = Gaussian(a_mean, np.linalg.inv(a_prec))
        gb = Gaussian(b_mean, np.linalg.inv(b_prec))
        gc = Gaussian(c_mean, np.linalg.inv(c_prec))
        for v in rng.normal(size=(5, 2)):
            lhs = ga.density(v) * gb.density(v)
            rhs = math.exp(log_const) * gc.density(v)
            assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-300)


def test_product_rejects_singular_precision():
    sing = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        product(np.zeros(2), sing, np.zeros(2), np.eye(2))


def test_lemma31_split_matches_direct_kernel_product():
    rng = np.random.default_rng(7)
    for S in (1.0, -1.0, 2.5):
        op = kolmogorov_operator(S)
        for _ in range(40):
            s = rng.uniform(0.0, 0.8)
            r = rng.uniform(0.05, 1 - s - 0.05)
            z = rng.normal(scale=0.5, size=2)
            z_factor, g = lemma31_split(op, s, r, z)
            for w in rng.normal(scale=0.5, size=(3, 2)):
                direct = kernel_eval(op, r, z, w) * kernel_eval(
                    op, 1 - s - r, w, np.zeros(2)
                )
                split = z_factor * g.density(w)
                assert split == pytest.approx(direct, rel=1e-11, abs=1e-300)


def test_lemma31_split_degenerate_times():
    op = kolmogorov_operator(1.0)
    with pytest.raises(DegenerateTimeError):
        lemma31_split(op, 0.5, 1e-12, np.zeros(2))
    with pytest.raises(ValueError):
        lemma31_split(op, 0.5, 0.7, np.zeros(2))


def test_central_moments_closed_forms():
    cov = np.array([[1.7, 0.4], [0.4, 0.9]])
    g = Gaussian(np.array([5.0, -2.0]), cov)
    assert central_moment(g, 2, 0) == pytest.approx(cov[0, 0])
    assert central_moment(g, 1, 1) == pytest.approx(cov[0, 1])
    assert central_moment(g, 4, 0) == pytest.approx(3 * cov[0, 0] ** 2)
    assert central_moment(g, 6, 0) == pytest.approx(15 * cov[0, 0] ** 3)
    # Isserlis at order 4 mixed: E[w1^2 w2^2] = s11 s22 + 2 s12^2
    assert central_moment(g, 2, 2) == pytest.approx(
        cov[0, 0] * cov[1, 1] + 2 * cov[0, 1] ** 2
    )
    assert central_moment(g, 3, 0) == 0.0
    assert central_moment(g, 3, 2) == 0.0


def test_central_moments_monte_carlo_cross_check():
    cov = np.array([[0.8, -0.3], [-0.3, 1.2]])
    rng = np.random.default_rng(11)
    w = rng.multivariate_normal(np.zeros(2), cov, size=400000)
    table = central_moment_table(cov)
    for (a, b), want in table.items():
        if a + b == 0 or (a + b) % 2 == 1:
            continue
        got = np.mean(w[:, 0] ** a * w[:, 1] ** b)
        scale = max(1.0, abs(want))
        assert got == pytest.approx(want, abs=0.08 * scale)


def test_moment_order_cap():
    g = Gaussian(np.zeros(2), np.eye(2))
    with pytest.raises(OrderOverflowError):
        central_moment(g, 5, 3)
    with pytest.raises(OrderOverflowError):
        polynomial_expectation(g, [(1.0, 7, 0)])


def test_polynomial_expectation_noncentral():
    g = Gaussian(np.array([1.5, -0.5]), np.array([[0.6, 0.1], [0.1, 0.4]]))
    # E[w1^2] = var + mean^2, E[w1 w2] = cov + m1 m2
    poly = [(2.0, 2, 0), (3.0, 1, 1), (-1.0, 0, 0)]
    want = (
        2.0 * (0.6 + 1.5 ** 2)
        + 3.0 * (0.1 + 1.5 * -0.5)
        - 1.0
    )
    assert polynomial_expectation(g, poly) == pytest.approx(want, rel=1e-13)
