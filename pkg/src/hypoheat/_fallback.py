"""NumPy implementation of the simulation core, used when the compiled
extension is unavailable. Same counter-based random stream, same results."""
from __future__ import annotations

import math

import numpy as np

from .expr import evaluate_array

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_INV32 = 2.3283064365386963e-10  # 2^-32


def _philox_block(c0, c1, c2, c3, seed):
    """Philox4x32-10 on arrays of 32-bit counter words; returns the first two
    output words."""
    k0 = np.uint32(seed & 0xFFFFFFFF)
    k1 = np.uint32((seed >> 32) & 0xFFFFFFFF)
    for _ in range(10):
        p0 = _M0 * c0.astype(np.uint64)
        p1 = _M1 * c2.astype(np.uint64)
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo0 = (p0 & _MASK32).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _MASK32).astype(np.uint32)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32((int(k0) + int(_W0)) & 0xFFFFFFFF)
        k1 = np.uint32((int(k1) + int(_W1)) & 0xFFFFFFFF)
    return c0, c1


def _normals_for_step(seed, path_lo, n_paths, step):
    paths = np.arange(path_lo, path_lo + n_paths, dtype=np.uint64)
    c0 = (paths & _MASK32).astype(np.uint32)
    c1 = (paths >> np.uint64(32)).astype(np.uint32)
    c2 = np.full(n_paths, step & 0xFFFFFFFF, dtype=np.uint32)
    c3 = np.full(n_paths, (step >> 32) & 0xFFFFFFFF, dtype=np.uint32)
    w0, w1 = _philox_block(c0, c1, c2, c3, seed)
    u1 = (w0.astype(np.float64) + 1.0) * _INV32
    u2 = (w1.astype(np.float64) + 0.5) * _INV32
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def philox_normals(seed, path_lo, n_paths, n_steps):
    """Standard normals indexed by (path, step); array (n_paths, n_steps)."""
    out = np.empty((n_paths, n_steps))
    for s in range(n_steps):
        out[:, s] = _normals_for_step(seed, path_lo, n_paths, s)
    return out


def euler_maruyama(b1, b2, s1, s2, x01, x02, dt, n_steps, record_steps,
                   seed, path_lo, n_paths, radius):
    """Vectorized Euler-Maruyama over a block of paths; b*, s* are expression
    trees for the Ito drift and the diffusion field. Mirrors the compiled
    core: returns (endpoints, first bad path index or -1)."""
    record_steps = np.asarray(record_steps, dtype=np.int64)
    out = np.empty((len(record_steps), n_paths, 2))
    x1 = np.full(n_paths, x01)
    x2 = np.full(n_paths, x02)
    sqdt = math.sqrt(dt)
    rec = 0
    for s in range(n_steps):
        z = _normals_for_step(seed, path_lo, n_paths, s)
        d1 = evaluate_array(b1, x1, x2)
        d2 = evaluate_array(b2, x1, x2)
        e1 = evaluate_array(s1, x1, x2)
        e2 = evaluate_array(s2, x1, x2)
        # per-step drift increments are clamped exactly as in the compiled
        # core: singular drifts trap paths locally instead of ejecting them
        x1 = x1 + np.clip(d1 * dt, -1.0, 1.0) + e1 * z * sqdt
        x2 = x2 + np.clip(d2 * dt, -1.0, 1.0) + e2 * z * sqdt
        bad = np.flatnonzero(~((np.abs(x1) <= radius) & (np.abs(x2) <= radius)))
        if bad.size:
            return out, int(path_lo + bad[0])
        while rec < len(record_steps) and record_steps[rec] == s + 1:
            out[rec, :, 0] = x1
            out[rec, :, 1] = x2
            rec += 1
    return out, -1
