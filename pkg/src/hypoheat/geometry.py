"""Invariant side of the expansion: Lie brackets, structure constants of the
frame {X1, X2 = [X0, X1]}, the canonical volume, curvature-like invariants,
and the geometric form of the coefficient, together with Hamiltonian extremals
on the cotangent bundle.

All derivatives in this module are exact symbolic derivatives of expression
trees; numbers appear only at the final evaluation step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import (
    Add,
    Const,
    Div,
    Expr,
    Mul,
    Sub,
    differentiate,
    evaluate,
    simplify,
)
from .duhamel import TaylorData, second_order_coefficient

__all__ = [
    "VectorField",
    "VectorFieldPair",
    "StructureConstants",
    "CurvatureInvariants",
    "VolumeDensity",
    "CotangentState",
    "DegenerateFrameError",
    "ChartFormError",
    "HypothesisError",
    "FlowBlowupError",
    "lie_bracket",
    "check_hypotheses",
    "structure_constants",
    "canonical_volume",
    "divergence",
    "curvature_invariants",
    "r22",
    "coefficient_geometric",
    "coefficient_coordinate",
    "full_asymptotics",
    "extremal_flow",
    "hamiltonian",
    "poisson_residuals",
]

_PARALLEL_RTOL = 1e-10


class DegenerateFrameError(ArithmeticError):
    """det[X1 | X2] vanishes at the evaluation point."""


class ChartFormError(ValueError):
    """Operation needs X1 = d/dx1 exactly and the pair is not in that form."""


class HypothesisError(ValueError):
    """Hormander or parallelism hypothesis fails at the base point."""


class FlowBlowupError(ArithmeticError):
    """Extremal flow left the finite range; carries the failing step index."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite cotangent state at step {step}")


@dataclass(frozen=True)
class VectorField:
    """Chart components: X = f1 d/dx1 + f2 d/dx2."""

    f1: Expr
    f2: Expr

    def at(self, point):
        return np.array([evaluate(self.f1, point), evaluate(self.f2, point)])


@dataclass(frozen=True)
class VectorFieldPair:
    X0: VectorField
    X1: VectorField


@dataclass(frozen=True)
class StructureConstants:
    """Coefficients of [X1,X2] and [X0,X2] in the frame {X1, X2}, as
    functions on the chart."""

    c12_1: Expr
    c12_2: Expr
    c02_1: Expr
    c02_2: Expr


@dataclass(frozen=True)
class CurvatureInvariants:
    K1: float
    K2: float


@dataclass(frozen=True)
class VolumeDensity:
    """mu = rho dx1 ^ dx2 with the positive-density convention rho > 0."""

    rho: Expr


@dataclass(frozen=True)
class CotangentState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if x.shape != (2,) or p.shape != (2,):
            raise ValueError("CotangentState needs 2-vectors x and p")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise ValueError("CotangentState must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)


# Symbolic helpers ---------------------------------------------------------------

def _mul(a, b):
    return simplify(Mul(a, b))


def _sub(a, b):
    return simplify(Sub(a, b))


def _add(a, b):
    return simplify(Add(a, b))


def _directional(X, g):
    """X(g) = f1 dg/dx1 + f2 dg/dx2, symbolic."""
    return _add(_mul(X.f1, differentiate(g, 1)), _mul(X.f2, differentiate(g, 2)))


def lie_bracket(X, Y):
    """[X, Y]^k = X(Y^k) - Y(X^k), componentwise symbolic."""
    return VectorField(
        _sub(_directional(X, Y.f1), _directional(Y, X.f1)),
        _sub(_directional(X, Y.f2), _directional(Y, X.f2)),
    )


def _frame(pair):
    return pair.X1, lie_bracket(pair.X0, pair.X1)


def _frame_det_expr(X1, X2):
    return _sub(_mul(X1.f1, X2.f2), _mul(X1.f2, X2.f1))


def check_hypotheses(pair, x0):
    """Pointwise hypothesis check at x0.

    hormander: X1 and [X0, X1] span the tangent plane there.
    parallel: X0(x0) is a multiple of X1(x0).
    """
    X1, X2 = _frame(pair)
    v1 = X1.at(x0)
    v2 = X2.at(x0)
    det = v1[0] * v2[1] - v1[1] * v2[0]
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    hormander = n1 > 0 and n2 > 0 and abs(det) > _PARALLEL_RTOL * n1 * n2
    v0 = pair.X0.at(x0)
    wedge = v0[0] * v1[1] - v0[1] * v1[0]
    n0 = np.linalg.norm(v0)
    parallel = n1 > 0 and (n0 == 0.0 or abs(wedge) <= _PARALLEL_RTOL * max(n0 * n1, 1.0))
    return {"hormander": bool(hormander), "parallel": bool(parallel)}


def structure_constants(pair):
    """Solve [X1,X2] = c12_1 X1 + c12_2 X2 and [X0,X2] = c02_1 X1 + c02_2 X2
    symbolically (Cramer on the frame matrix). Evaluating the returned
    expressions where the frame degenerates raises a division-domain error.
    """
    X1, X2 = _frame(pair)
    det = _frame_det_expr(X1, X2)

    def solve(B):
        # [B^1; B^2] = c_1 [X1] + c_2 [X2]
        c1 = simplify(Div(_sub(_mul(B.f1, X2.f2), _mul(B.f2, X2.f1)), det))
        c2 = simplify(Div(_sub(_mul(X1.f1, B.f2), _mul(X1.f2, B.f1)), det))
        return c1, c2

    b12 = lie_bracket(X1, X2)
    b02 = lie_bracket(pair.X0, X2)
    c12_1, c12_2 = solve(b12)
    c02_1, c02_2 = solve(b02)
    return StructureConstants(c12_1, c12_2, c02_1, c02_2)


def canonical_volume(pair, x0=(0.0, 0.0)):
    """The density rho with mu(X1, X2) = +-1, normalized positive at x0.

    rho = sign / det[X1 | X2] with the sign fixed so rho(x0) > 0.
    """
    X1, X2 = _frame(pair)
    det = _frame_det_expr(X1, X2)
    d0 = evaluate(det, x0)
    if d0 == 0.0:
        raise DegenerateFrameError("frame determinant vanishes at the base point")
    sign = 1.0 if d0 > 0 else -1.0
    return VolumeDensity(simplify(Div(Const(sign), det)))


def divergence(X, mu):
    """div_mu X = (1/rho) (d/dx1 (rho X^1) + d/dx2 (rho X^2)), symbolic."""
    r = mu.rho
    flux = _add(
        differentiate(_mul(r, X.f1), 1),
        differentiate(_mul(r, X.f2), 2),
    )
    return simplify(Div(flux, r))


def curvature_invariants(pair, x0):
    """K1 = -(c12_2)^2 + 3 X1(c12_2) and K2 = 2 c12_2, at x0."""
    sc = structure_constants(pair)
    hyp = check_hypotheses(pair, x0)
    if not hyp["hormander"]:
        raise DegenerateFrameError("frame degenerate at the base point")
    c = evaluate(sc.c12_2, x0)
    xc = evaluate(_directional(pair.X1, sc.c12_2), x0)
    return CurvatureInvariants(K1=-c * c + 3.0 * xc, K2=2.0 * c)


def r22(pair, x0, h1, h2):
    """The curvature entry as a polynomial in the fiber coordinates:

    h1^2 K1 + h1 (-3 c12_1 - 2 c12_2 c02_2 + 3 X0(c12_2) + 3 X1(c02_2))
            + h2 K2 + (-2 c02_1 - (c02_2)^2 + 3 X0(c02_2)),

    all structure constants and their directional derivatives at x0.
    """
    sc = structure_constants(pair)
    inv = curvature_invariants(pair, x0)
    c12_1 = evaluate(sc.c12_1, x0)
    c12_2 = evaluate(sc.c12_2, x0)
    c02_1 = evaluate(sc.c02_1, x0)
    c02_2 = evaluate(sc.c02_2, x0)
    x0_c12_2 = evaluate(_directional(pair.X0, sc.c12_2), x0)
    x1_c02_2 = evaluate(_directional(pair.X1, sc.c02_2), x0)
    x0_c02_2 = evaluate(_directional(pair.X0, sc.c02_2), x0)
    lin_h1 = -3.0 * c12_1 - 2.0 * c12_2 * c02_2 + 3.0 * x0_c12_2 + 3.0 * x1_c02_2
    const = -2.0 * c02_1 - c02_2 ** 2 + 3.0 * x0_c02_2
    return h1 * h1 * inv.K1 + h1 * lin_h1 + h2 * inv.K2 + const


def _beta(pair, x0):
    # X0(x0) = beta X1(x0), least squares with the parallelism residual checked
    v0 = pair.X0.at(x0)
    v1 = pair.X1.at(x0)
    n1 = np.linalg.norm(v1)
    if n1 == 0.0:
        raise HypothesisError("X1 vanishes at the base point")
    beta = float(v0 @ v1) / float(v1 @ v1)
    resid = np.linalg.norm(v0 - beta * v1)
    if resid > _PARALLEL_RTOL * max(np.linalg.norm(v0), n1, 1.0):
        raise HypothesisError(
            f"X0 not parallel to X1 at the base point (residual {resid:.3e})"
        )
    return beta


def coefficient_geometric(pair, x0):
    """Invariant form of the coefficient of t in the diagonal expansion:

    -1/2 div_mu(X0) - 1/2 |X0|^2 + K1/14 - K2^2/70 at x0, where |X0| = |beta|
    in the frame norm that declares X1(x0) a unit vector.
    """
    hyp = check_hypotheses(pair, x0)
    if not hyp["hormander"]:
        raise HypothesisError("span hypothesis fails at the base point")
    if not hyp["parallel"]:
        raise HypothesisError("X0 not parallel to X1 at the base point")
    beta = _beta(pair, x0)
    mu = canonical_volume(pair, x0)
    div0 = evaluate(divergence(pair.X0, mu), x0)
    inv = curvature_invariants(pair, x0)
    return -0.5 * div0 - 0.5 * beta * beta + inv.K1 / 14.0 - inv.K2 ** 2 / 70.0


def _is_const(e, value):
    e = simplify(e)
    return isinstance(e, Const) and e.value == value


def coefficient_coordinate(pair, x0):
    """Chart route to the same coefficient: requires X1 = d/dx1 exactly,
    reads off the Taylor data of the drift components at x0 and delegates to
    the closed-form perturbation assembly."""
    if not (_is_const(pair.X1.f1, 1.0) and _is_const(pair.X1.f2, 0.0)):
        raise ChartFormError("X1 must be exactly d/dx1 in the chart")
    a1 = pair.X0.f1
    a2 = pair.X0.f2
    if abs(evaluate(a2, x0)) > _PARALLEL_RTOL:
        raise HypothesisError("alpha2 must vanish at the base point (parallelism)")
    d1a2 = differentiate(a2, 1)
    d11a2 = differentiate(d1a2, 1)
    d111a2 = differentiate(d11a2, 1)
    S = evaluate(d1a2, x0)
    if S == 0.0:
        raise HypothesisError("d/dx1 alpha2 vanishes at the base point")
    taylor = TaylorData(
        alpha1_0=evaluate(a1, x0),
        d1_alpha1_0=evaluate(differentiate(a1, 1), x0),
        d2_alpha2_0=evaluate(differentiate(a2, 2), x0),
        S=S,
        d11_alpha2_0=evaluate(d11a2, x0),
        d111_alpha2_0=evaluate(d111a2, x0),
    )
    return second_order_coefficient(taylor)


def full_asymptotics(pair, x0, t):
    """Two-term model prediction for the mu-density on the diagonal:

        (sqrt(12) / (2 pi t^2)) (1 + t * coefficient_geometric).

    Meaningful as an asymptotic statement for small t only.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    c = coefficient_geometric(pair, x0)
    return math.sqrt(12.0) / (2.0 * math.pi * t * t) * (1.0 + t * c)


def extremal_flow(pair, initial, T, steps):
    """Fixed-step RK4 for the Hamiltonian H = h0 + h1^2/2 on the cotangent
    bundle, h_i = <p, X_i(x)>. Returns the list of states including the
    initial one."""
    if T <= 0:
        raise ValueError("T must be positive")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    fields = (pair.X0, pair.X1)
    jacs = [
        [(differentiate(X.f1, j), differentiate(X.f2, j)) for j in (1, 2)]
        for X in fields
    ]

    def rhs(x, p):
        v0 = fields[0].at(x)
        v1 = fields[1].at(x)
        h1 = float(p @ v1)
        xdot = v0 + h1 * v1
        pdot = np.empty(2)
        for j in (0, 1):
            d0 = np.array([evaluate(jacs[0][j][0], x), evaluate(jacs[0][j][1], x)])
            d1 = np.array([evaluate(jacs[1][j][0], x), evaluate(jacs[1][j][1], x)])
            pdot[j] = -float(p @ d0) - h1 * float(p @ d1)
        return xdot, pdot

    h = T / steps
    x = np.array(initial.x, dtype=float)
    p = np.array(initial.p, dtype=float)
    out = [CotangentState(x.copy(), p.copy())]
    for k in range(steps):
        k1x, k1p = rhs(x, p)
        k2x, k2p = rhs(x + 0.5 * h * k1x, p + 0.5 * h * k1p)
        k3x, k3p = rhs(x + 0.5 * h * k2x, p + 0.5 * h * k2p)
        k4x, k4p = rhs(x + h * k3x, p + h * k3p)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise FlowBlowupError(k + 1)
        out.append(CotangentState(x.copy(), p.copy()))
    return out


def hamiltonian(pair, state):
    """H = <p, X0(x)> + <p, X1(x)>^2 / 2."""
    v0 = pair.X0.at(state.x)
    v1 = pair.X1.at(state.x)
    return float(state.p @ v0) + 0.5 * float(state.p @ v1) ** 2


def poisson_residuals(pair, state):
    """Residuals of the bracket relations of the frame Hamiltonians h_i:

        {h0, h1} = h2,
        {h1, h2} = c12_1 h1 + c12_2 h2,
        {h0, h2} = c02_1 h1 + c02_2 h2.

    For h_X = <p, X(x)> the canonical bracket satisfies {h_X, h_Y} = h_[X,Y]
    exactly, so each residual is evaluated from symbolic Lie brackets and the
    symbolic structure constants at the given state.
    """
    X1, X2 = _frame(pair)
    sc = structure_constants(pair)
    x, p = state.x, state.p
    h1 = float(p @ X1.at(x))
    h2 = float(p @ X2.at(x))
    r1 = float(p @ lie_bracket(pair.X0, pair.X1).at(x)) - h2
    r2 = float(p @ lie_bracket(X1, X2).at(x)) - (
        evaluate(sc.c12_1, x) * h1 + evaluate(sc.c12_2, x) * h2
    )
    r3 = float(p @ lie_bracket(pair.X0, X2).at(x)) - (
        evaluate(sc.c02_1, x) * h1 + evaluate(sc.c02_2, x) * h2
    )
    return (r1, r2, r3)
