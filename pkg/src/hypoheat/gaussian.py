"""Exact Gaussian fundamental solutions of 2D linear-quadratic hypoelliptic
operators: controllability check, closed-form matrix exponentials,
Gramians, kernel evaluation, and the weighted-dilation homogeneity residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LQOperator",
    "KalmanError",
    "SingularGramianError",
    "kalman_ok",
    "mat_exp",
    "gramian_gamma",
    "gramian_G",
    "kernel_eval",
    "rescale_residual",
    "kolmogorov_operator",
]

_KALMAN_RTOL = 1e-12


class KalmanError(ValueError):
    """The pair (A, b) is not controllable: det[b | A b] vanishes."""


class SingularGramianError(ArithmeticError):
    """Gramian not positive definite (t <= 0 or Kalman failure)."""


def _as_mat2(A):
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2) or not np.all(np.isfinite(A)):
        raise ValueError("expected a finite 2x2 matrix")
    return A


def _as_vec2(v):
    v = np.asarray(v, dtype=float)
    if v.shape != (2,) or not np.all(np.isfinite(v)):
        raise ValueError("expected a finite 2-vector")
    return v


def kalman_ok(A, b):
    """True iff rank [b | A b] = 2, with a scale-free tolerance on the determinant."""
    A = _as_mat2(A)
    b = _as_vec2(b)
    ab = A @ b
    nb = np.linalg.norm(b)
    nab = np.linalg.norm(ab)
    if nb == 0.0 or nab == 0.0:
        return False
    det = b[0] * ab[1] - b[1] * ab[0]
    return abs(det) > _KALMAN_RTOL * nb * nab


@dataclass(frozen=True)
class LQOperator:
    """The principal-part model: drift matrix A, diffusion column b.

    Generator: (A x) . grad + (1/2) (b . grad)^2. The Kalman condition
    rank [b | A b] = 2 is checked at construction.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_mat2(self.A))
        object.__setattr__(self, "b", _as_vec2(self.b))
        if not kalman_ok(self.A, self.b):
            raise KalmanError("rank [b | A b] < 2: operator is not hypoelliptic")

    @property
    def nilpotent(self):
        # A^2 == 0 exactly in 2D iff trace and det both vanish
        return (
            self.A[0, 0] + self.A[1, 1] == 0.0
            and self.A[0, 0] * self.A[1, 1] - self.A[0, 1] * self.A[1, 0] == 0.0
        )


def kolmogorov_operator(S=1.0):
    """The chart-form model: A = [[0,0],[S,0]], b = (1,0)."""
    return LQOperator(np.array([[0.0, 0.0], [S, 0.0]]), np.array([1.0, 0.0]))


def mat_exp(A, t):
    """exp(tA) by closed-form case split on the eigenstructure of tA.

    Nilpotent and defective matrices take the exact polynomial branch, so the
    Kolmogorov case is computed without any series truncation.
    """
    A = _as_mat2(A)
    B = t * A
    tr = B[0, 0] + B[1, 1]
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    disc = tr * tr - 4.0 * det
    eye = np.eye(2)
    scale = max(abs(tr * tr), abs(4.0 * det), 1e-300)
    if abs(disc) <= 1e-14 * scale:
        # repeated eigenvalue lam = tr/2 (covers nilpotent: lam = 0)
        lam = 0.5 * tr
        return math.exp(lam) * (eye + (B - lam * eye))
    if disc > 0.0:
        sq = math.sqrt(disc)
        l1 = 0.5 * (tr + sq)
        l2 = 0.5 * (tr - sq)
        return (math.exp(l1) * (B - l2 * eye) - math.exp(l2) * (B - l1 * eye)) / (l1 - l2)
    # complex pair lam = m +- i*w
    m = 0.5 * tr
    w = 0.5 * math.sqrt(-disc)
    return math.exp(m) * (math.cos(w) * eye + (math.sin(w) / w) * (B - m * eye))


def _gramian_nilpotent(A, b, t):
    # integrand (I - A tau) b b* (I - A* tau) is quadratic in tau
    bb = np.outer(b, b)
    Abb = A @ bb
    return bb * t - (Abb + Abb.T) * (t * t / 2.0) + (A @ bb @ A.T) * (t ** 3 / 3.0)


def _gramian_quadrature(A, b, t, n):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    tau = 0.5 * t * (nodes + 1.0)
    out = np.zeros((2, 2))
    for tk, wk in zip(tau, weights):
        e = mat_exp(A, -tk)
        v = e @ b
        out += wk * np.outer(v, v)
    return 0.5 * t * out


def gramian_gamma(op, t):
    """Gamma_t = int_0^t exp(-A tau) b b* exp(-A* tau) dtau.

    Closed form for nilpotent A; otherwise composite Gauss-Legendre with a
    doubled-order consistency check at 1e-12 relative.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return np.zeros((2, 2))
    if op.nilpotent:
        return _gramian_nilpotent(op.A, op.b, t)
    n = max(48, int(16 * (1 + abs(t) * np.linalg.norm(op.A))))
    g1 = _gramian_quadrature(op.A, op.b, t, n)
    g2 = _gramian_quadrature(op.A, op.b, t, 2 * n)
    if np.linalg.norm(g1 - g2) > 1e-10 * max(np.linalg.norm(g2), 1e-300):
        raise ArithmeticError("Gramian quadrature failed to converge")
    return g2


def gramian_G(op, t):
    """G_t = exp(tA) Gamma_t exp(tA*)."""
    e = mat_exp(op.A, t)
    return e @ gramian_gamma(op, t) @ e.T


def kernel_eval(op, t, x, y):
    """Fundamental solution (w.r.t. Lebesgue measure) of the LQ operator:

    q0(t, x, y) = exp(-(y - e^{tA} x)* G_t^{-1} (y - e^{tA} x) / 2) / (2 pi sqrt(det G_t))
    """
    if t <= 0:
        raise SingularGramianError("kernel requires t > 0")
    x = _as_vec2(x)
    y = _as_vec2(y)
    G = gramian_G(op, t)
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if det <= 0.0:
        raise SingularGramianError(f"det G_t = {det} is not positive")
    d = y - mat_exp(op.A, t) @ x
    # explicit 2x2 inverse quadratic form
    quad = (G[1, 1] * d[0] * d[0] - 2.0 * G[0, 1] * d[0] * d[1] + G[0, 0] * d[1] * d[1]) / det
    return math.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))


def rescale_residual(t, eps, x, y):
    """Homogeneity defect of the Kolmogorov kernel under the weighted dilation
    (x1, x2) -> (eps x1, eps^3 x2) with time scaled by eps^2:

        | eps^4 p0(eps^2 t, delta_eps x, delta_eps y) - p0(t, x, y) |

    Exact homogeneity makes this zero up to rounding.
    """
    if not (t > 0 and 0 < eps <= 1):
        raise ValueError("need t > 0 and 0 < eps <= 1")
    op = kolmogorov_operator(1.0)
    x = _as_vec2(x)
    y = _as_vec2(y)
    dx = np.array([eps * x[0], eps ** 3 * x[1]])
    dy = np.array([eps * y[0], eps ** 3 * y[1]])
    lhs = eps ** 4 * kernel_eval(op, eps ** 2 * t, dx, dy)
    rhs = kernel_eval(op, t, x, y)
    return abs(lhs - rhs)
