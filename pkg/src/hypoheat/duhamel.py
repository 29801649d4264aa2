"""Perturbation engine: Duhamel convolutions of the exact Gaussian kernel
against monomial first-order operators.

Every space integral is reduced exactly to Gaussian moments (never raw 2D
quadrature); only the time variables are integrated numerically. Single
convolutions use adaptive Gauss-Kronrod on [0,1]; double convolutions use a
Duffy-mapped tensor Gauss-Legendre rule on the time simplex with order
escalation until two consecutive rules agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.integrate import quad

from .gaussian import LQOperator, gramian_G, gramian_gamma, kernel_eval, mat_exp
from .gauss_algebra import central_moment_table

__all__ = [
    "MonomialOp",
    "TaylorData",
    "PerturbationSeries",
    "ExpansionCoefficient",
    "QuadratureError",
    "grad_log_kernel",
    "conv1",
    "conv2",
    "build_perturbation",
    "second_order_coefficient",
    "second_order_coefficient_numeric",
    "expansion_coefficient",
    "diagonal_value",
    "remainder_integrand",
    "remainder_probe",
]

_CORNER = 1e-8  # times closer than this to a simplex corner use the clamped value


class QuadratureError(ArithmeticError):
    """Time quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        self.achieved = achieved
        super().__init__(f"{message} (achieved error {achieved:.3e})")


@dataclass(frozen=True)
class MonomialOp:
    """First-order operator coeff * x1^a * x2^b * d/dx_deriv."""

    coeff: float
    exps: tuple  # (a, b)
    deriv: int  # 1 or 2

    def __post_init__(self):
        a, b = self.exps
        if a < 0 or b < 0 or a + b > 3:
            raise ValueError("monomial degree must satisfy 0 <= a + b <= 3")
        if self.deriv not in (1, 2):
            raise ValueError("deriv must be 1 or 2")


@dataclass(frozen=True)
class TaylorData:
    """Chart Taylor coefficients of the drift components at the base point."""

    alpha1_0: float
    d1_alpha1_0: float
    d2_alpha2_0: float
    S: float  # d/dx1 alpha2 at 0, nonzero by hypothesis
    d11_alpha2_0: float
    d111_alpha2_0: float

    def __post_init__(self):
        if self.S == 0.0:
            raise ValueError("S = d_x1 alpha2(0) must be nonzero")


@dataclass(frozen=True)
class PerturbationSeries:
    x_terms: tuple  # order-eps operator, 3 MonomialOps
    y_terms: tuple  # order-eps^2 operator, 4 MonomialOps


@dataclass(frozen=True)
class ExpansionCoefficient:
    leading: float  # 1 / (2 pi sqrt(det G_1))
    first_order: float  # bracketed coefficient of t

    def __post_init__(self):
        if not self.leading > 0:
            raise ValueError("leading coefficient must be positive")


def _inv2(M):
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / det


def _det2(M):
    return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]


def diagonal_value(op):
    """q0(1, 0, 0), the normalizer used when reporting convolution values."""
    return kernel_eval(op, 1.0, np.zeros(2), np.zeros(2))


def grad_log_kernel(op, t, x, y):
    """The vector g with d/dx_i q0 = g_i q0, namely -Gamma_t^{-1}(x - e^{-At} y)."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gam = gramian_gamma(op, t)
    return -_inv2(gam) @ (x - mat_exp(op.A, -t) @ y)


# Bivariate polynomials as {(a, b): coeff} dicts --------------------------------

def _pmul(p, q):
    out = {}
    for (a, b), c in p.items():
        for (d, e), f in q.items():
            key = (a + d, b + e)
            out[key] = out.get(key, 0.0) + c * f
    return out


def _padd_into(acc, p, scale=1.0):
    for k, v in p.items():
        acc[k] = acc.get(k, 0.0) + scale * v


def _ppow(p, n):
    out = {(0, 0): 1.0}
    for _ in range(n):
        out = _pmul(out, p)
    return out


def _expect_centered(p, table):
    # expectation of a z-polynomial under a centered Gaussian with moment table
    total = 0.0
    for (a, b), c in p.items():
        if (a + b) % 2 == 0 and c != 0.0:
            total += c * table[(a, b)]
    return total


def _centered_product_const(cov_a, cov_b):
    """N(0, cov_a) * N(0, cov_b) = const * N(0, cov); returns (const, cov)."""
    Pa = _inv2(cov_a)
    Pb = _inv2(cov_b)
    P = Pa + Pb
    cov = _inv2(P)
    const = math.sqrt(_det2(Pa) * _det2(Pb) / _det2(P)) / (2.0 * math.pi)
    return const, cov


def _clamp_times_1(s):
    return min(max(s, _CORNER), 1.0 - _CORNER)


def _conv1_integrand(op, D, s):
    s = _clamp_times_1(s)
    a, b = D.exps
    i = D.deriv - 1
    G_s = gramian_G(op, s)
    gam = gramian_gamma(op, 1.0 - s)
    G_rest = gramian_G(op, 1.0 - s)
    gam_inv = _inv2(gam)
    # q0(1-s, z, 0) = sqrt(det Gam / det G) * N(z; 0, Gam_{1-s})
    weight = math.sqrt(_det2(gam) / _det2(G_rest))
    const, cov = _centered_product_const(G_s, gam)
    poly = _pmul(
        {(a, b): D.coeff},
        {(1, 0): -gam_inv[i, 0], (0, 1): -gam_inv[i, 1]},
    )
    table = central_moment_table(cov)
    return weight * const * _expect_centered(poly, table)


def conv1(op, D, normalized=False, tol=1e-9):
    """(q0 * D q0)(1, 0, 0): the z-integral reduced to Gaussian moments, the
    s-integral done by adaptive Gauss-Kronrod to absolute tolerance `tol` on
    the normalized value."""
    q0_diag = diagonal_value(op)
    raw_tol = tol * q0_diag
    val, err = quad(
        lambda s: _conv1_integrand(op, D, s),
        0.0,
        1.0,
        epsabs=0.1 * raw_tol,
        epsrel=1e-10,
        limit=200,
    )
    if err > raw_tol:
        raise QuadratureError("conv1 quadrature did not converge", err / q0_diag)
    return val / q0_diag if normalized else val


def _conv2_integrand(op, D1, D2, s, r):
    a1, b1 = D1.exps
    i1 = D1.deriv - 1
    a2, b2 = D2.exps
    i2 = D2.deriv - 1

    e_rA = mat_exp(op.A, r)
    e_mrA = mat_exp(op.A, -r)
    gam_r = gramian_gamma(op, r)
    gam_rest = gramian_gamma(op, 1.0 - s - r)
    gam_tot = gramian_gamma(op, 1.0 - s)
    gam_tot_inv = _inv2(gam_tot)

    # Gaussian-product split of q0(r,z,w) q0(1-s-r,w,0) into
    # kappa * exp(-z' gam_tot^{-1} z / 2) * N(w; M z, Sigma)
    M = gam_rest @ e_mrA.T @ gam_tot_inv
    sigma = M @ gam_r @ e_rA.T
    sigma = 0.5 * (sigma + sigma.T)
    G_r = gramian_G(op, r)
    G_rest = gramian_G(op, 1.0 - s - r)
    kappa2 = _det2(sigma) * _det2(gam_tot) / (_det2(G_r) * _det2(G_rest))
    norm_ratio = math.sqrt(kappa2)  # equals 1 for trace-free drift matrices

    # w-polynomial with z-polynomial coefficients:
    #   F = c1 z1^a1 z2^b1 [-(gam_r^{-1} z)_{i1} + (gam_r^{-1} e^{-rA} w)_{i1}]
    #       * c2 w1^a2 w2^b2 * (-(gam_rest^{-1} w)_{i2})
    gam_r_inv = _inv2(gam_r)
    K = gam_r_inv @ e_mrA
    zmono = {(a1, b1): D1.coeff}
    bracket1 = {
        (0, 0): {(1, 0): -gam_r_inv[i1, 0], (0, 1): -gam_r_inv[i1, 1]},
        (1, 0): {(0, 0): K[i1, 0]},
        (0, 1): {(0, 0): K[i1, 1]},
    }
    F1 = {wk: _pmul(zmono, zp) for wk, zp in bracket1.items()}
    gam_rest_inv = _inv2(gam_rest)
    F2 = {
        (a2 + 1, b2): {(0, 0): -D2.coeff * gam_rest_inv[i2, 0]},
        (a2, b2 + 1): {(0, 0): -D2.coeff * gam_rest_inv[i2, 1]},
    }
    F = {}
    for (c, d), zp in F1.items():
        for (e, f), zq in F2.items():
            key = (c + e, d + f)
            if key in F:
                _padd_into(F[key], _pmul(zp, zq))
            else:
                F[key] = _pmul(zp, zq)

    # E over w ~ N(M z, Sigma): binomial expansion, mean components linear in z
    w_table = central_moment_table(sigma)
    nu1 = {(1, 0): M[0, 0], (0, 1): M[0, 1]}
    nu2 = {(1, 0): M[1, 0], (0, 1): M[1, 1]}
    nu1_pows = [_ppow(nu1, j) for j in range(5)]
    nu2_pows = [_ppow(nu2, j) for j in range(5)]
    Q = {}
    for (c, d), zp in F.items():
        for j in range(c + 1):
            for k in range(d + 1):
                m = w_table[(c - j, d - k)]
                if m == 0.0:
                    continue
                term = _pmul(_pmul(nu1_pows[j], nu2_pows[k]), zp)
                _padd_into(Q, term, comb(c, j) * comb(d, k) * m)

    # z-layer: q0(s,0,z) * exp(-z' gam_tot^{-1} z / 2) with the latter read as
    # a scaled N(0, gam_tot); odd-degree z-monomials vanish (centered Gaussian)
    G_s = gramian_G(op, s)
    const, cov = _centered_product_const(G_s, gam_tot)
    z_table = central_moment_table(cov)
    return norm_ratio * const * _expect_centered(Q, z_table)


def _duffy_rule(op, D1, D2, n):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    total = 0.0
    for iu in range(n):
        s = _clamp_times_1(u[iu])
        span = 1.0 - s
        row = 0.0
        for iv in range(n):
            r = span * u[iv]
            r = min(max(r, _CORNER), span - _CORNER)
            row += w[iv] * _conv2_integrand(op, D1, D2, s, r)
        total += w[iu] * span * row
    return total


def conv2(op, D1, D2, normalized=False, tol=1e-8):
    """(q0 * D1 q0 * D2 q0)(1, 0, 0) over the time simplex.

    The w- and z-integrals are reduced to Gaussian moments; the (s, r) simplex
    is integrated on a Duffy square with tensor Gauss-Legendre nodes, doubling
    refinement until two consecutive orders agree within `tol` (absolute, on
    the normalized value).
    """
    q0_diag = diagonal_value(op)
    raw_tol = tol * q0_diag
    prev = _duffy_rule(op, D1, D2, 16)
    for n in (24, 32, 48):
        cur = _duffy_rule(op, D1, D2, n)
        if abs(cur - prev) <= 0.5 * raw_tol:
            return cur / q0_diag if normalized else cur
        prev = cur
    raise QuadratureError(
        "conv2 simplex quadrature did not converge", abs(cur - prev) / q0_diag
    )


# Perturbation assembly ----------------------------------------------------------

def build_perturbation(taylor):
    """The order-eps and order-eps^2 perturbation operators in chart form."""
    S = taylor.S
    d11 = taylor.d11_alpha2_0
    d111 = taylor.d111_alpha2_0
    x_terms = (
        MonomialOp(taylor.alpha1_0, (0, 0), 1),
        MonomialOp(0.5 * d11, (2, 0), 2),
        MonomialOp(-0.5 * d11 / S, (0, 0), 1),
    )
    y_terms = (
        MonomialOp(taylor.d1_alpha1_0, (1, 0), 1),
        MonomialOp(taylor.d2_alpha2_0, (0, 1), 2),
        MonomialOp(d111 / 6.0, (3, 0), 2),
        MonomialOp(-0.5 * (d111 / S - (d11 / S) ** 2), (1, 0), 1),
    )
    return PerturbationSeries(x_terms, y_terms)


def second_order_coefficient(taylor):
    """Closed-form coefficient of t in the diagonal expansion, in chart data."""
    S = taylor.S
    c = taylor.d11_alpha2_0 / S
    return (
        -0.5 * taylor.alpha1_0 ** 2
        - 0.5 * (taylor.d1_alpha1_0 + taylor.d2_alpha2_0 - taylor.alpha1_0 * c)
        - (12.0 / 35.0) * c * c
        + (3.0 / 14.0) * (taylor.d111_alpha2_0 / S)
    )


def expansion_coefficient(taylor):
    """Both displayed coefficients of the two-term diagonal expansion."""
    leading = math.sqrt(12.0) / (2.0 * math.pi * abs(taylor.S))
    return ExpansionCoefficient(leading, second_order_coefficient(taylor))


def _merge_shapes(terms):
    merged = {}
    for t in terms:
        key = (t.exps, t.deriv)
        merged[key] = merged.get(key, 0.0) + t.coeff
    return [
        MonomialOp(c, exps, deriv) for (exps, deriv), c in merged.items() if c != 0.0
    ]


def second_order_coefficient_numeric(op, series, tol=1e-7):
    """Quadrature route to the coefficient of t: sum of double convolutions of
    the order-eps terms plus single convolutions of the order-eps^2 terms,
    normalized by q0(1,0,0). Also asserts that the order-eps single
    convolutions vanish."""
    x_shapes = _merge_shapes(series.x_terms)
    y_shapes = _merge_shapes(series.y_terms)
    first = sum(conv1(op, D, normalized=True) for D in x_shapes)
    if abs(first) > tol:
        raise QuadratureError("order-eps term failed to vanish", abs(first))
    total = 0.0
    for D1 in x_shapes:
        for D2 in x_shapes:
            total += conv2(op, D1, D2, normalized=True)
    for D in y_shapes:
        total += conv1(op, D, normalized=True)
    return total


# Remainder boundedness probe ----------------------------------------------------

def _abs_first_moment(gam_inv, j):
    # E |[gam^{-1} w]_j| for w ~ N(0, gam) = sqrt(2/pi) * sqrt([gam^{-1}]_jj)
    return math.sqrt(2.0 / math.pi) * math.sqrt(gam_inv[j, j])


def remainder_integrand(op, ops3, s, z1, z2):
    """Majorant integrand for the triple-convolution remainder: an
    absolute-moment polynomial in |z1|, |z2| times the Gaussian weight

        exp(-z' Gamma_{1-s}^{-1} z / 2) / (2 pi sqrt(det Gamma_{1-s})).

    Each first-order factor contributes its monomial in |z| and an affine
    bound on the derivative bracket. Accepts array-valued z1, z2.
    """
    s = _clamp_times_1(s)
    gam = gramian_gamma(op, 1.0 - s)
    gam_inv = _inv2(gam)
    det = _det2(gam)
    az1 = np.abs(z1)
    az2 = np.abs(z2)
    P = 1.0
    for D in ops3:
        a, b = D.exps
        j = D.deriv - 1
        bracket = (
            abs(gam_inv[j, 0]) * az1 + abs(gam_inv[j, 1]) * az2
            + _abs_first_moment(gam_inv, j)
        )
        P = P * abs(D.coeff) * az1 ** a * az2 ** b * bracket
    quad_form = (
        gam_inv[0, 0] * z1 * z1 + 2.0 * gam_inv[0, 1] * z1 * z2 + gam_inv[1, 1] * z2 * z2
    )
    return P * np.exp(-0.5 * quad_form) / (2.0 * math.pi * math.sqrt(det))


def remainder_probe(op, D1, D2, D3, bound_samples=50, z_points=200):
    """Max of the remainder majorant over a grid on [0,1] x R^2 (the z box is
    scaled to several standard deviations of Gamma_1). A finite value is the
    empirical counterpart of the analytic boundedness of the remainder."""
    gam1 = gramian_gamma(op, 1.0)
    L1 = 6.0 * math.sqrt(gam1[0, 0])
    L2 = 6.0 * math.sqrt(gam1[1, 1])
    z1 = np.linspace(-L1, L1, z_points)
    z2 = np.linspace(-L2, L2, z_points)
    Z1, Z2 = np.meshgrid(z1, z2, indexing="ij")
    best = 0.0
    for s in np.linspace(0.0, 1.0, bound_samples):
        vals = remainder_integrand(op, (D1, D2, D3), s, Z1, Z2)
        best = max(best, float(np.max(vals)))
    return best
