"""Closed Gaussian calculus: the product identity for Gaussian densities and
bivariate central/raw moments up to order six, so every space integral in the
perturbation engine reduces to finite algebra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np

from .gaussian import gramian_gamma, mat_exp

__all__ = [
    "Gaussian",
    "ScaledGaussian",
    "OrderOverflowError",
    "DegenerateTimeError",
    "product",
    "lemma31_split",
    "central_moment",
    "central_moment_table",
    "polynomial_expectation",
]

_SYM_RTOL = 1e-12
_MAX_ORDER = 6


class OrderOverflowError(ValueError):
    """Moment order above six requested; the calculus is capped by design."""


class DegenerateTimeError(ArithmeticError):
    """Gramian at a time too close to zero; the split is singular there."""


@dataclass(frozen=True)
class Gaussian:
    """Mean/covariance pair. Covariance is symmetrized at construction and
    must be positive definite."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValueError("Gaussian needs a 2-vector mean and 2x2 covariance")
        asym = abs(cov[0, 1] - cov[1, 0])
        scale = max(abs(cov[0, 1]), abs(cov[1, 0]), 1e-300)
        if asym > _SYM_RTOL * max(scale, np.linalg.norm(cov)):
            raise ValueError(f"covariance asymmetry residual {asym} too large")
        cov = 0.5 * (cov + cov.T)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if cov[0, 0] <= 0.0 or det <= 0.0:
            raise ValueError("covariance is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def density(self, v):
        v = np.asarray(v, dtype=float)
        det = self.cov[0, 0] * self.cov[1, 1] - self.cov[0, 1] ** 2
        d = v - self.mean
        quad = (
            self.cov[1, 1] * d[0] ** 2
            - 2.0 * self.cov[0, 1] * d[0] * d[1]
            + self.cov[0, 0] * d[1] ** 2
        ) / det
        return math.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))


@dataclass(frozen=True)
class ScaledGaussian:
    """A Gaussian density carrying a multiplicative weight, stored in log form
    so the time-simplex corners do not underflow."""

    log_weight: float
    gaussian: Gaussian

    def __post_init__(self):
        if not math.isfinite(self.log_weight):
            raise ValueError("log_weight must be finite")

    def density(self, v):
        return math.exp(self.log_weight) * self.gaussian.density(v)


def _inv2(M):
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if det == 0.0:
        raise np.linalg.LinAlgError("singular 2x2 matrix")
    return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / det


def _logdet_pd(M):
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if det <= 0.0:
        raise ValueError("matrix is not positive definite")
    return math.log(det)


def product(a_mean, a_prec, b_mean, b_prec):
    """Pointwise product of two Gaussian densities given in precision form.

    Returns (c_mean, c_prec, log_const) with

        density_a(v) * density_b(v) = exp(log_const) * density_c(v)

    via completion of squares: c_prec = A + B, c = (A+B)^{-1}(A a + B b), and
    the displaced quadratic (a-b)* (A^{-1}+B^{-1})^{-1} (a-b) folded into
    log_const together with the normalization mismatch.
    """
    a = np.asarray(a_mean, dtype=float)
    b = np.asarray(b_mean, dtype=float)
    A = np.asarray(a_prec, dtype=float)
    B = np.asarray(b_prec, dtype=float)
    c_prec = A + B
    try:
        c_mean = _inv2(c_prec) @ (A @ a + B @ b)
        C = _inv2(_inv2(A) + _inv2(B))
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular precision matrix in Gaussian product") from exc
    d = a - b
    displaced = float(d @ C @ d)
    log_const = (
        0.5 * (_logdet_pd(A) + _logdet_pd(B) - _logdet_pd(c_prec))
        - math.log(2.0 * math.pi)
        - 0.5 * displaced
    )
    return c_mean, c_prec, log_const


def lemma31_split(op, s, r, z):
    """Factor q0(r, z, w) * q0(1-s-r, w, 0) as (scalar in z) x (Gaussian in w).

    Returns (z_factor, w_gaussian) where

        z_factor   = exp(-z* Gamma_{1-s}^{-1} z / 2) / (2 pi sqrt(det Gamma_{1-s}))
        w_gaussian = N(nu, Sigma),
        Sigma = Gamma_{1-s-r} e^{-rA*} Gamma_{1-s}^{-1} Gamma_r e^{rA*},
        nu    = Gamma_{1-s-r} e^{-rA*} Gamma_{1-s}^{-1} z.
    """
    if not (0 <= s <= 1 and 0 < r < 1 - s):
        raise ValueError("need 0 <= s <= 1 and 0 < r < 1 - s")
    if r < 1e-10 or (1 - s - r) < 1e-10:
        raise DegenerateTimeError("Gramian singular: r or 1-s-r below 1e-10")
    z = np.asarray(z, dtype=float)
    gam_r = gramian_gamma(op, r)
    gam_rest = gramian_gamma(op, 1 - s - r)
    gam_tot = gramian_gamma(op, 1 - s)
    gam_tot_inv = _inv2(gam_tot)
    e_mr = mat_exp(op.A, -r)
    M = gam_rest @ e_mr.T @ gam_tot_inv
    sigma = M @ gam_r @ mat_exp(op.A, r).T
    sigma = 0.5 * (sigma + sigma.T)
    nu = M @ z
    det_tot = gam_tot[0, 0] * gam_tot[1, 1] - gam_tot[0, 1] ** 2
    quad = float(z @ gam_tot_inv @ z)
    z_factor = math.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det_tot))
    return z_factor, Gaussian(nu, sigma)


def _isserlis(cov, idx):
    # sum over perfect matchings of the index list
    if not idx:
        return 1.0
    first = idx[0]
    total = 0.0
    for j in range(1, len(idx)):
        total += cov[first][idx[j]] * _isserlis(cov, idx[1:j] + idx[j + 1:])
    return total


def central_moment(g, a, b):
    """E[(w1 - m1)^a (w2 - m2)^b] for g = N(m, cov), by Isserlis pairing."""
    if a < 0 or b < 0:
        raise ValueError("moment orders must be nonnegative")
    if a + b > _MAX_ORDER:
        raise OrderOverflowError(f"moment order {a + b} exceeds the cap {_MAX_ORDER}")
    if (a + b) % 2 == 1:
        return 0.0
    cov = g.cov if isinstance(g, Gaussian) else np.asarray(g, dtype=float)
    return _isserlis(cov, (0,) * a + (1,) * b)


def central_moment_table(cov):
    """All central moments with a + b <= 6 for a covariance matrix, as a dict
    {(a, b): value}. Odd totals are zero and included for uniform lookup."""
    table = {}
    for a in range(_MAX_ORDER + 1):
        for b in range(_MAX_ORDER + 1 - a):
            if (a + b) % 2 == 1:
                table[(a, b)] = 0.0
            else:
                table[(a, b)] = _isserlis(cov, (0,) * a + (1,) * b)
    return table


def polynomial_expectation(g, poly):
    """E[sum coeff * w1^a * w2^b] under g, for poly a list of (coeff, a, b).

    Expands each monomial binomially around the mean and sums central moments.
    """
    for _, a, b in poly:
        if a + b > _MAX_ORDER:
            raise OrderOverflowError(
                f"monomial degree {a + b} exceeds the cap {_MAX_ORDER}"
            )
    table = central_moment_table(g.cov)
    m1, m2 = g.mean
    total = 0.0
    for coeff, a, b in poly:
        if coeff == 0.0:
            continue
        acc = 0.0
        for j in range(a + 1):
            for k in range(b + 1):
                cm = table[(a - j, b - k)]
                if cm != 0.0:
                    acc += comb(a, j) * comb(b, k) * m1 ** j * m2 ** k * cm
        total += coeff * acc
    return total
