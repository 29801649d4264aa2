"""Independent numerical oracles for the diagonal expansion: Stratonovich SDE
Monte Carlo with kernel density estimation, weighted least-squares coefficient
fitting, and an explicit finite-difference semigroup solver.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _backend
from .expr import Add, Const, Mul, differentiate, evaluate, evaluate_array, simplify
from .geometry import (
    ChartFormError,
    VectorField,
    _is_const,
    canonical_volume,
    divergence,
)

__all__ = [
    "SimConfig",
    "DensityEstimate",
    "FDGrid",
    "CoefficientFit",
    "PathBlowupError",
    "StabilityError",
    "DegenerateSampleError",
    "ito_drift",
    "simulate_endpoints",
    "estimate_density",
    "fit_coefficient",
    "fd_evolve",
]

_BLOWUP_RADIUS = 1e6
_N_BATCHES = 16


class PathBlowupError(ArithmeticError):
    """A sample path left the allowed radius; carries the path index."""

    def __init__(self, path_index):
        self.path_index = path_index
        super().__init__(f"path {path_index} exceeded the blow-up radius")


class StabilityError(ValueError):
    """FD time step violates the stability bound."""


class DegenerateSampleError(ValueError):
    """Endpoint sample has zero variance along an axis."""


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float
    t_grid: tuple
    bandwidth: object = "auto"  # positive float or "auto"
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        tg = tuple(float(t) for t in self.t_grid)
        if not tg or any(t <= 0 for t in tg) or any(
            b <= a for a, b in zip(tg, tg[1:])
        ):
            raise ValueError("t_grid must be strictly increasing and positive")
        if self.bandwidth != "auto" and not (
            isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0
        ):
            raise ValueError("bandwidth must be positive or 'auto'")
        object.__setattr__(self, "t_grid", tg)


@dataclass(frozen=True)
class DensityEstimate:
    value: float  # density w.r.t. the canonical volume at x0
    stderr: float
    n_effective: int

    def __post_init__(self):
        if self.value < 0 or self.stderr < 0:
            raise ValueError("value and stderr must be nonnegative")


@dataclass(frozen=True)
class FDGrid:
    bounds: tuple  # (x1min, x1max, x2min, x2max)
    nx1: int
    nx2: int
    dt: float

    def __post_init__(self):
        x1min, x1max, x2min, x2max = self.bounds
        if not (x1min < x1max and x2min < x2max):
            raise ValueError("bounds must be a nonempty box")
        if self.nx1 < 3 or self.nx2 < 3:
            raise ValueError("need at least 3 nodes per axis")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def h1(self):
        return (self.bounds[1] - self.bounds[0]) / (self.nx1 - 1)

    @property
    def h2(self):
        return (self.bounds[3] - self.bounds[2]) / (self.nx2 - 1)


@dataclass(frozen=True)
class CoefficientFit:
    c: float
    stderr: float
    r_squared: float

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


def ito_drift(pair):
    """Drift of the Ito form of the simulated SDE.

    The simulated generator is Y0 + X1^2/2 with Y0 = X0 + div_mu(X1) X1 / 2
    (the divergence term folded into the drift), and the Stratonovich-to-Ito
    correction adds (DX1) X1 / 2. Returned symbolically.
    """
    mu = canonical_volume(pair)
    d = divergence(pair.X1, mu)
    X0, X1 = pair.X0, pair.X1
    half = Const(0.5)

    def comp(f0, f1):
        y0 = simplify(
            _add(f0, _mul(half, _mul(d, f1)))
        )
        # Stratonovich correction: (X1 . grad) f1 / 2
        strat = _mul(
            half,
            _add(
                _mul(X1.f1, differentiate(f1, 1)),
                _mul(X1.f2, differentiate(f1, 2)),
            ),
        )
        return simplify(_add(y0, strat))

    return VectorField(comp(X0.f1, X1.f1), comp(X0.f2, X1.f2))


def _add(a, b):
    return simplify(Add(a, b))


def _mul(a, b):
    return simplify(Mul(a, b))


def _worker_count():
    env = os.environ.get("HYPOHEAT_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def simulate_endpoints(pair, x0, cfg, radius=_BLOWUP_RADIUS, force_numpy=False):
    """Euler-Maruyama endpoints for each t in cfg.t_grid.

    Path i is driven by the counter-based stream (cfg.seed, i), so the output
    is deterministic regardless of worker count (HYPOHEAT_THREADS) or backend.
    Returns a list of (n_paths, 2) arrays, one per observation time.
    """
    drift = ito_drift(pair)
    record = []
    for t in cfg.t_grid:
        k = round(t / cfg.dt)
        if abs(k * cfg.dt - t) > 1e-9 * max(t, cfg.dt):
            raise ValueError(f"observation time {t} is not a multiple of dt")
        record.append(k)
    record = np.asarray(record, dtype=np.int64)
    n_steps = int(record[-1])

    workers = _worker_count()
    block = max(1, math.ceil(cfg.n_paths / max(workers * 4, 1)))
    blocks = [
        (lo, min(block, cfg.n_paths - lo)) for lo in range(0, cfg.n_paths, block)
    ]

    def run(args):
        lo, n = args
        return _backend.euler_maruyama(
            drift.f1, drift.f2, pair.X1.f1, pair.X1.f2,
            x0[0], x0[1], cfg.dt, n_steps, record,
            cfg.seed, lo, n, radius, force_numpy=force_numpy,
        )

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    for _, bad in results:
        if bad >= 0:
            raise PathBlowupError(bad)
    parts = [r[0] for r in results]
    return [
        np.concatenate([p[j] for p in parts], axis=0) for j in range(len(record))
    ]


def estimate_density(endpoints, x0, pair, bandwidth="auto"):
    """Gaussian-kernel density estimate at x0, converted to the canonical
    volume by dividing out rho(x0). Per-axis bandwidths: the normal-reference
    rule h_j = sigma_j n^{-1/6} when bandwidth is 'auto'. The reported value
    is bias-corrected by bandwidth extrapolation, 2 p(h) - p(sqrt(2) h),
    cancelling the O(h^2) smoothing bias (the plain estimate at this sample
    size is biased by several standard errors). Standard error by batch means
    over 16 batches."""
    pts = np.asarray(endpoints, dtype=float)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("empty endpoint sample")
    sig = pts.std(axis=0, ddof=1) if n > 1 else np.zeros(2)
    if bandwidth == "auto":
        if np.any(sig == 0.0):
            raise DegenerateSampleError("zero sample variance along an axis")
        h = sig * n ** (-1.0 / 6.0)
    else:
        h = np.array([float(bandwidth), float(bandwidth)])

    def kernel_values(hh):
        u1 = (pts[:, 0] - x0[0]) / hh[0]
        u2 = (pts[:, 1] - x0[1]) / hh[1]
        return np.exp(-0.5 * (u1 * u1 + u2 * u2)) / (
            2.0 * math.pi * hh[0] * hh[1]
        )

    kern = 2.0 * kernel_values(h) - kernel_values(h * math.sqrt(2.0))
    rho0 = evaluate(canonical_volume(pair, x0).rho, x0)
    value = float(kern.mean()) / rho0

    nb = min(_N_BATCHES, n)
    batches = np.array_split(kern, nb)
    means = np.array([b.mean() for b in batches]) / rho0
    stderr = float(means.std(ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0
    return DensityEstimate(value=value, stderr=stderr, n_effective=n)


def fit_coefficient(pair, x0, estimates, S):
    """Weighted least squares of the normalized diagonal density against the
    two-term model.

    estimates is a list of (t, DensityEstimate) pairs holding densities w.r.t.
    the canonical volume. In that normalization the leading term is
    sqrt(12)/(2 pi t^2) for any S, so r(t) = value(t) * 2 pi t^2 / sqrt(12)
    and r(t) ~ 1 + c t. (S is part of the record; the |S| factor of the
    Lebesgue normalization cancels against rho(x0).) Weights 1/stderr^2, or
    uniform when any stderr vanishes.
    """
    if S == 0:
        raise ValueError("S must be nonzero")
    if len(estimates) < 3:
        raise ValueError("need at least 3 observation times")
    t = np.array([float(ti) for ti, _ in estimates])
    if np.ptp(t) == 0.0:
        raise ValueError("observation times must not all coincide")
    scale = 2.0 * math.pi * t * t / math.sqrt(12.0)
    r = np.array([e.value for _, e in estimates]) * scale
    se = np.array([e.stderr for _, e in estimates]) * scale
    w = np.ones_like(t) if np.any(se == 0.0) else 1.0 / (se * se)
    # model: r - 1 = c t
    sw = float(np.sum(w * t * t))
    c = float(np.sum(w * t * (r - 1.0))) / sw
    stderr = 0.0 if np.any(se == 0.0) else 1.0 / math.sqrt(sw)
    resid = r - 1.0 - c * t
    mean = float(np.sum(w * (r - 1.0)) / np.sum(w))
    ss_tot = float(np.sum(w * (r - 1.0 - mean) ** 2))
    ss_res = float(np.sum(w * resid * resid))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return CoefficientFit(c=c, stderr=stderr, r_squared=r2)


def fd_evolve(pair, phi, T, grid, x0=(0.0, 0.0)):
    """Explicit finite differences for u_t = Y0 . grad u + u_x1x1 / 2 in chart
    form (X1 = d/dx1), first-order upwind drift, centered diffusion, Dirichlet
    zero boundary. Returns u(T, x0) by bilinear interpolation."""
    if T <= 0:
        raise ValueError("T must be positive")
    if not (_is_const(pair.X1.f1, 1.0) and _is_const(pair.X1.f2, 0.0)):
        raise ChartFormError("fd_evolve needs the chart form X1 = d/dx1")
    x1min, x1max, x2min, x2max = grid.bounds
    if not (x1min < x0[0] < x1max and x2min < x0[1] < x2max):
        raise ValueError("grid bounds must contain x0 with margin")
    x1 = np.linspace(x1min, x1max, grid.nx1)
    x2 = np.linspace(x2min, x2max, grid.nx2)
    X1g, X2g = np.meshgrid(x1, x2, indexing="ij")
    drift = ito_drift(pair)  # chart form: no Stratonovich part, Y0 only
    a1 = evaluate_array(drift.f1, X1g, X2g)
    a2 = evaluate_array(drift.f2, X1g, X2g)
    h1, h2 = grid.h1, grid.h2

    amax1 = float(np.max(np.abs(a1)))
    amax2 = float(np.max(np.abs(a2)))
    bound = 0.9 * min(
        h1 * h1 / 2.0,
        h1 / amax1 if amax1 > 0 else math.inf,
        h2 / amax2 if amax2 > 0 else math.inf,
    )
    if grid.dt > bound:
        raise StabilityError(
            f"dt = {grid.dt} exceeds the stability bound {bound:.3e}"
        )
    n_steps = max(1, math.ceil(T / grid.dt))
    dt = T / n_steps

    u = evaluate_array(phi, X1g, X2g).astype(float)
    u[0, :] = u[-1, :] = 0.0
    u[:, 0] = u[:, -1] = 0.0
    pos1 = a1[1:-1, 1:-1] > 0
    pos2 = a2[1:-1, 1:-1] > 0
    for _ in range(n_steps):
        c = u[1:-1, 1:-1]
        # upwind transport: u_t = a u_x picks the difference on the side the
        # characteristics come from (forward when a > 0)
        d1 = np.where(
            pos1, (u[2:, 1:-1] - c) / h1, (c - u[:-2, 1:-1]) / h1
        )
        d2 = np.where(
            pos2, (u[1:-1, 2:] - c) / h2, (c - u[1:-1, :-2]) / h2
        )
        lap1 = (u[2:, 1:-1] - 2.0 * c + u[:-2, 1:-1]) / (h1 * h1)
        u[1:-1, 1:-1] = c + dt * (
            a1[1:-1, 1:-1] * d1 + a2[1:-1, 1:-1] * d2 + 0.5 * lap1
        )
    peak = float(np.max(np.abs(u)))
    ring = max(
        float(np.max(np.abs(u[1, :]))), float(np.max(np.abs(u[-2, :]))),
        float(np.max(np.abs(u[:, 1]))), float(np.max(np.abs(u[:, -2]))),
    )
    if peak > 0 and ring > 1e-6 * peak:
        warnings.warn(
            f"boundary ring carries {ring / peak:.2e} of the peak: "
            "domain may be too small",
            RuntimeWarning,
            stacklevel=2,
        )
    i = np.searchsorted(x1, x0[0]) - 1
    j = np.searchsorted(x2, x0[1]) - 1
    i = min(max(i, 0), grid.nx1 - 2)
    j = min(max(j, 0), grid.nx2 - 2)
    fx = (x0[0] - x1[i]) / h1
    fy = (x0[1] - x2[j]) / h2
    return float(
        (1 - fx) * (1 - fy) * u[i, j]
        + fx * (1 - fy) * u[i + 1, j]
        + (1 - fx) * fy * u[i, j + 1]
        + fx * fy * u[i + 1, j + 1]
    )
