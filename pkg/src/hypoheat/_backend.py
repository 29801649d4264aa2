"""Backend selection: compiled Cython core when available, NumPy otherwise.

Both backends draw the same Philox4x32-10 stream indexed by (path, step), so
a run is reproducible across backends and worker counts.
"""
from __future__ import annotations

import numpy as np

from . import expr as ex

try:
    from . import _core
except ImportError:
    _core = None

from . import _fallback

BACKEND = "compiled" if _core is not None else "numpy"


def backend_name():
    return BACKEND


def compile_program(e):
    """Flatten an expression tree into (opcodes, constants) for the stack
    machine of the compiled core."""
    code = []
    consts = []

    def emit(node):
        if isinstance(node, ex.Const):
            code.extend([0, len(consts)])
            consts.append(node.value)
        elif isinstance(node, ex.Var):
            code.append(1 if node.index == 1 else 2)
        elif isinstance(node, ex.Add):
            emit(node.left)
            emit(node.right)
            code.append(3)
        elif isinstance(node, ex.Sub):
            emit(node.left)
            emit(node.right)
            code.append(4)
        elif isinstance(node, ex.Mul):
            emit(node.left)
            emit(node.right)
            code.append(5)
        elif isinstance(node, ex.Div):
            emit(node.left)
            emit(node.right)
            code.append(6)
        elif isinstance(node, ex.IntPow):
            emit(node.base)
            code.extend([7, node.exponent])
        elif isinstance(node, ex.Func):
            emit(node.child)
            code.append({"sin": 9, "cos": 10, "exp": 11, "log": 12}[node.kind])
        else:
            raise TypeError(f"not an Expr: {node!r}")

    emit(e)
    if not consts:
        consts.append(0.0)  # the core indexes the array unconditionally
    return np.asarray(code, dtype=np.int32), np.asarray(consts, dtype=np.float64)


def philox_normals(seed, path_lo, n_paths, n_steps):
    if _core is not None:
        return _core.philox_normals(seed, path_lo, n_paths, n_steps)
    return _fallback.philox_normals(seed, path_lo, n_paths, n_steps)


def euler_maruyama(b1, b2, s1, s2, x01, x02, dt, n_steps, record_steps,
                   seed, path_lo, n_paths, radius, force_numpy=False):
    """Run a block of paths; expression-tree inputs, dispatched to the
    selected backend. Returns (endpoints, first bad path index or -1)."""
    record_steps = np.asarray(record_steps, dtype=np.int64)
    if _core is not None and not force_numpy:
        args = []
        for e in (b1, b2, s1, s2):
            c, k = compile_program(e)
            args.extend([c, k])
        return _core.euler_maruyama(
            *args, float(x01), float(x02), float(dt), int(n_steps),
            record_steps, int(seed), int(path_lo), int(n_paths), float(radius)
        )
    return _fallback.euler_maruyama(
        b1, b2, s1, s2, float(x01), float(x02), float(dt), int(n_steps),
        record_steps, int(seed), int(path_lo), int(n_paths), float(radius)
    )
