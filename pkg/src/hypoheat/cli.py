"""Command-line interface: config ingestion, subcommand dispatch, and report
emission.

Exit codes: 0 all checks pass, 1 a verification check failed its tolerance,
2 configuration error, 3 numeric failure (quadrature, blow-up, instability).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from ._backend import backend_name
from .expr import ExprSyntaxError, UnknownIdentifierError, parse
from .gaussian import (
    KalmanError,
    SingularGramianError,
    kernel_eval,
    kolmogorov_operator,
)
from .gauss_algebra import lemma31_split
from .duhamel import (
    MonomialOp,
    QuadratureError,
    TaylorData,
    build_perturbation,
    conv1,
    conv2,
    second_order_coefficient_numeric,
)
from .geometry import (
    ChartFormError,
    HypothesisError,
    VectorField,
    VectorFieldPair,
    canonical_volume,
    check_hypotheses,
    coefficient_coordinate,
    coefficient_geometric,
    curvature_invariants,
    divergence,
)
from .expr import evaluate, differentiate
from .oracle import (
    FDGrid,
    PathBlowupError,
    SimConfig,
    StabilityError,
    estimate_density,
    fd_evolve,
    fit_coefficient,
    simulate_endpoints,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    pair: VectorFieldPair
    base_point: tuple
    sim: SimConfig
    fd: FDGrid
    fit_window: tuple
    output_dir: str
    raw: dict


_DEFAULTS = {
    "sim": {
        "n_paths": 20000,
        "dt": 1e-3,
        "t_grid": [0.1, 0.2, 0.3],
        "bandwidth": "auto",
        "seed": 0,
    },
    "fd": {"bounds": [-2.0, 2.0, -0.5, 0.5], "nx1": 201, "nx2": 401, "dt": 1e-4},
    "fit_window": [0.05, 0.4],
    "output_dir": ".",
}


def load_config(path):
    """Read and validate the JSON config; raises ConfigError with a reason."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON at line {exc.lineno} column {exc.colno} "
            f"(byte offset {exc.pos})"
        ) from exc

    def expr_pair(key):
        val = raw.get(key)
        if not (isinstance(val, list) and len(val) == 2):
            raise ConfigError(f"{key} must be a list of two expression strings")
        try:
            return VectorField(parse(val[0]), parse(val[1]))
        except (ExprSyntaxError, UnknownIdentifierError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    X0 = expr_pair("x0_expr")
    X1 = expr_pair("x1_expr")
    pair = VectorFieldPair(X0, X1)
    base = tuple(float(v) for v in raw.get("base_point", (0.0, 0.0)))
    hyp = check_hypotheses(pair, base)
    if not hyp["parallel"]:
        raise ConfigError(
            "hypothesis (a) fails: X0 is not parallel to X1 at the base point"
        )
    if not hyp["hormander"]:
        raise ConfigError(
            "hypothesis (b) fails: X1 and [X0,X1] do not span at the base point"
        )
    simraw = {**_DEFAULTS["sim"], **raw.get("sim", {})}
    try:
        sim = SimConfig(
            n_paths=int(simraw["n_paths"]),
            dt=float(simraw["dt"]),
            t_grid=tuple(float(t) for t in simraw["t_grid"]),
            bandwidth=simraw["bandwidth"],
            seed=int(simraw["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc
    fdraw = {**_DEFAULTS["fd"], **raw.get("fd", {})}
    try:
        fd = FDGrid(
            bounds=tuple(float(v) for v in fdraw["bounds"]),
            nx1=int(fdraw["nx1"]),
            nx2=int(fdraw["nx2"]),
            dt=float(fdraw["dt"]),
        )
    except ValueError as exc:
        raise ConfigError(f"fd: {exc}") from exc
    window = tuple(float(v) for v in raw.get("fit_window", _DEFAULTS["fit_window"]))
    if len(window) != 2 or window[0] >= window[1]:
        raise ConfigError("fit_window must be (lo, hi) with lo < hi")
    outdir = str(raw.get("output_dir", _DEFAULTS["output_dir"]))
    return Config(pair, base, sim, fd, window, outdir, raw)


def _chart_S(cfg):
    return evaluate(differentiate(cfg.pair.X0.f2, 1), cfg.base_point)


def _taylor(cfg):
    a1, a2 = cfg.pair.X0.f1, cfg.pair.X0.f2
    x0 = cfg.base_point
    d1a2 = differentiate(a2, 1)
    return TaylorData(
        alpha1_0=evaluate(a1, x0),
        d1_alpha1_0=evaluate(differentiate(a1, 1), x0),
        d2_alpha2_0=evaluate(differentiate(a2, 2), x0),
        S=evaluate(d1a2, x0),
        d11_alpha2_0=evaluate(differentiate(d1a2, 1), x0),
        d111_alpha2_0=evaluate(differentiate(differentiate(d1a2, 1), 1), x0),
    )


# Expected convolution table (values normalized by q0(1,0,0)); S enters as
# shown. Kept module-level so tests can exercise the failure path.
def expected_convolutions(S):
    return {
        "conv1": [
            ("d1", MonomialOp(1.0, (0, 0), 1), 0.0),
            ("x1^2 d2", MonomialOp(1.0, (2, 0), 2), 0.0),
            ("x1 d1", MonomialOp(1.0, (1, 0), 1), -0.5),
            ("x2 d2", MonomialOp(1.0, (0, 1), 2), -0.5),
            ("x1^3 d2", MonomialOp(1.0, (3, 0), 2), -3.0 / (14.0 * S)),
        ],
        "conv2": [
            ("d1", "d1", -0.5),
            ("x1^2 d2", "d1", 3.0 / (14.0 * S)),
            ("d1", "x1^2 d2", -3.0 / (14.0 * S)),
            ("x1^2 d2", "x1^2 d2", 9.0 / (70.0 * S * S)),
        ],
    }


_CONV_OPS = {
    "d1": MonomialOp(1.0, (0, 0), 1),
    "x1^2 d2": MonomialOp(1.0, (2, 0), 2),
}

CONV_TOL = 1e-6


def run_convolutions(S, tol=CONV_TOL):
    """Compute the nine convolution identities for one S; returns a list of
    row dicts and the overall pass flag."""
    op = kolmogorov_operator(S)
    table = expected_convolutions(S)
    rows = []
    ok = True
    for name, D, expect in table["conv1"]:
        got = conv1(op, D, normalized=True)
        err = abs(got - expect)
        ok = ok and err <= tol
        rows.append(
            {"lhs_op": name, "rhs_op": "", "expected": expect,
             "computed": got, "abs_error": err}
        )
    for n1, n2, expect in table["conv2"]:
        got = conv2(op, _CONV_OPS[n1], _CONV_OPS[n2], normalized=True)
        err = abs(got - expect)
        ok = ok and err <= tol
        rows.append(
            {"lhs_op": n1, "rhs_op": n2, "expected": expect,
             "computed": got, "abs_error": err}
        )
    return rows, ok


def run_lemma31(n_checks=200, tol=1e-11, seed=0):
    """Random pointwise checks of the kernel-product factorization."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_checks):
        S = rng.choice([1.0, -1.0, 2.5])
        op = kolmogorov_operator(float(S))
        s = rng.uniform(0.05, 0.8)
        r = rng.uniform(0.05, 1.0 - s - 0.05)
        z = rng.normal(size=2)
        w = rng.normal(size=2)
        lhs = kernel_eval(op, r, z, w) * kernel_eval(
            op, 1.0 - s - r, w, np.zeros(2)
        )
        z_factor, g = lemma31_split(op, s, r, z)
        rhs = z_factor * g.density(w)
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst, worst <= tol


def run_identity(n_pairs=100, tol=1e-10, seed=0):
    """Random chart pairs: geometric vs coordinate coefficient."""
    rng = np.random.default_rng(seed)
    X1 = VectorField(parse("1"), parse("0"))
    worst = 0.0
    for _ in range(n_pairs):
        S = rng.uniform(0.2, 1.0) * rng.choice([1.0, -1.0])
        c = rng.uniform(-1.0, 1.0, size=9)
        a1 = (
            f"{c[0]} + {c[1]}*x1 + {c[2]}*x2 + {c[3]}*x1^2 + {c[4]}*x1*x2"
        )
        a2 = (
            f"{S}*x1 + {c[5]}*x1^2 + {c[6]}*x1^3 + {c[7]}*x1*x2 + {c[8]}*x2^2"
            f" + {rng.uniform(-1, 1)}*x1^4"
        )
        pair = VectorFieldPair(VectorField(parse(a1), parse(a2)), X1)
        g = coefficient_geometric(pair, (0.0, 0.0))
        cc = coefficient_coordinate(pair, (0.0, 0.0))
        worst = max(worst, abs(g - cc))
    return worst, worst <= tol


def invariants_record(cfg):
    pair, x0 = cfg.pair, cfg.base_point
    inv = curvature_invariants(pair, x0)
    mu = canonical_volume(pair, x0)
    div0 = evaluate(divergence(pair.X0, mu), x0)
    v0 = pair.X0.at(x0)
    v1 = pair.X1.at(x0)
    beta = float(v0 @ v1) / float(v1 @ v1)
    return {
        "K1": inv.K1,
        "K2": inv.K2,
        "div": div0,
        "beta": beta,
        "coefficient": coefficient_geometric(pair, x0),
    }


def _mc_estimates(cfg):
    lo, hi = cfg.fit_window
    ts = [t for t in cfg.sim.t_grid if lo <= t <= hi]
    if len(ts) < 3:
        ts = list(cfg.sim.t_grid)
    sim = SimConfig(cfg.sim.n_paths, cfg.sim.dt, tuple(ts),
                    cfg.sim.bandwidth, cfg.sim.seed)
    endpoints = simulate_endpoints(cfg.pair, cfg.base_point, sim)
    return [
        (t, estimate_density(e, cfg.base_point, cfg.pair, sim.bandwidth))
        for t, e in zip(ts, endpoints)
    ], endpoints, ts


def _fd_diagonal(cfg, t):
    """FD estimate of the diagonal density: semigroup applied to a narrow
    normalized bump (per-axis widths tied to the mesh, since the kernel is
    much tighter in x2 than in x1), debiased by extrapolation over the bump
    width."""
    vals = []
    bx, by = cfg.base_point
    for scale in (1.0, math.sqrt(2.0)):
        s1 = 3.0 * cfg.fd.h1 * scale
        s2 = 3.0 * cfg.fd.h2 * scale
        phi = parse(
            f"exp(-(x1 - {bx})^2/(2*{s1 * s1}) - (x2 - {by})^2/(2*{s2 * s2}))"
            f"/{2.0 * math.pi * s1 * s2}"
        )
        vals.append(fd_evolve(cfg.pair, phi, t, cfg.fd, x0=cfg.base_point))
    leb = 2.0 * vals[0] - vals[1]
    rho0 = evaluate(canonical_volume(cfg.pair, cfg.base_point).rho, cfg.base_point)
    return leb / rho0


def coeff_record(cfg, method):
    if method == "coordinate":
        return {"method": method,
                "c": coefficient_coordinate(cfg.pair, cfg.base_point)}
    if method == "geometric":
        return {"method": method,
                "c": coefficient_geometric(cfg.pair, cfg.base_point)}
    if method == "duhamel-numeric":
        taylor = _taylor(cfg)
        series = build_perturbation(taylor)
        op = kolmogorov_operator(taylor.S)
        return {"method": method,
                "c": second_order_coefficient_numeric(op, series)}
    if method == "montecarlo":
        estimates, _, _ = _mc_estimates(cfg)
        fit = fit_coefficient(cfg.pair, cfg.base_point, estimates, _chart_S(cfg))
        return {"method": method, "c": fit.c, "stderr": fit.stderr,
                "r_squared": fit.r_squared}
    if method == "fd":
        lo, hi = cfg.fit_window
        ts = [t for t in cfg.sim.t_grid if lo <= t <= hi]
        if len(ts) < 3:
            ts = list(cfg.sim.t_grid)
        from .oracle import DensityEstimate

        ests = [(t, DensityEstimate(max(_fd_diagonal(cfg, t), 0.0), 0.0, 1))
                for t in ts]
        fit = fit_coefficient(cfg.pair, cfg.base_point, ests, _chart_S(cfg))
        return {"method": method, "c": fit.c, "r_squared": fit.r_squared}
    raise ConfigError(f"unknown coefficient method {method!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_convolutions_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["lhs_op", "rhs_op", "expected", "computed", "abs_error"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, float) else v
                             for k, v in row.items()})


def _write_endpoints_csv(path, ts, endpoints):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_index", "t", "x1", "x2"])
        for t, block in zip(ts, endpoints):
            for i, (x1, x2) in enumerate(block):
                writer.writerow([i, repr(float(t)), repr(float(x1)),
                                 repr(float(x2))])


def run_report(cfg):
    """Everything at once; returns (report dict, all-pass flag, timings)."""
    checks = {}
    timings = {}
    all_ok = True

    t0 = time.perf_counter()
    S = _chart_S(cfg)
    op = kolmogorov_operator(S if S != 0 else 1.0)
    worst = 0.0
    for t in (0.25, 0.5, 1.0, 2.0):
        got = kernel_eval(op, t, np.zeros(2), np.zeros(2))
        want = math.sqrt(12.0) / (2.0 * math.pi * t * t * abs(S))
        worst = max(worst, abs(got - want) / want)
    checks["kernel_diagonal"] = {"residual": worst, "pass": worst <= 1e-12}
    timings["kernel_diagonal"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    worst, ok = run_lemma31(seed=cfg.sim.seed)
    checks["lemma31"] = {"residual": worst, "pass": ok}
    timings["lemma31"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rows, ok = run_convolutions(S if S != 0 else 1.0)
    checks["convolutions"] = {
        "residual": max(r["abs_error"] for r in rows), "pass": ok,
    }
    timings["convolutions"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    worst, ok = run_identity(n_pairs=25, seed=cfg.sim.seed)
    checks["coefficient_identity"] = {"residual": worst, "pass": ok}
    timings["coefficient_identity"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    coeffs = {}
    for method in ("coordinate", "geometric", "duhamel-numeric", "montecarlo",
                   "fd"):
        coeffs[method] = coeff_record(cfg, method)
    timings["coefficients"] = time.perf_counter() - t0
    agree = abs(coeffs["coordinate"]["c"] - coeffs["geometric"]["c"])
    checks["coordinate_vs_geometric"] = {"residual": agree, "pass": agree <= 1e-10}
    dq = abs(coeffs["duhamel-numeric"]["c"] - coeffs["coordinate"]["c"])
    checks["duhamel_vs_closed_form"] = {"residual": dq, "pass": dq <= 1e-6}

    for c in checks.values():
        all_ok = all_ok and c["pass"]
    report = {
        "version": __version__,
        "backend": backend_name(),
        "config": cfg.raw,
        "invariants": invariants_record(cfg),
        "coefficients": coeffs,
        "checks": checks,
        "all_pass": all_ok,
    }
    return report, all_ok, rows, timings


def _parse_vec(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise ConfigError("expected two comma-separated numbers")
    return np.array(parts)


def _build_parser():
    p = argparse.ArgumentParser(
        prog="hypoheat",
        description="Small-time diagonal heat-kernel expansion toolkit",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kernel", help="exact Gaussian kernel utilities")
    ksub = k.add_subparsers(dest="kernel_command", required=True)
    ke = ksub.add_parser("eval", help="evaluate the chart-model kernel")
    ke.add_argument("--t", type=float, required=True)
    ke.add_argument("--x", default="0,0", help="x1,x2")
    ke.add_argument("--y", default="0,0", help="y1,y2")
    ke.add_argument("--s", type=float, default=1.0, help="S = d1 alpha2(0)")

    v = sub.add_parser("verify", help="verification suites")
    v.add_argument("what", choices=["lemma31", "convolutions", "identity"])
    v.add_argument("--config", default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--n", type=int, default=100, help="random cases (identity)")
    v.add_argument("--output-dir", default=None)

    for name in ("invariants", "simulate", "report"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--n-paths", type=int, default=None)
        if name == "simulate":
            s.add_argument("--endpoints-csv", action="store_true")

    c = sub.add_parser("coeff", help="coefficient of t by one method")
    c.add_argument(
        "--method", required=True,
        choices=["coordinate", "geometric", "duhamel-numeric", "montecarlo", "fd"],
    )
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--n-paths", type=int, default=None)
    return p


def _apply_overrides(cfg, args):
    seed = getattr(args, "seed", None)
    n_paths = getattr(args, "n_paths", None)
    if seed is None and n_paths is None:
        return cfg
    sim = SimConfig(
        n_paths if n_paths is not None else cfg.sim.n_paths,
        cfg.sim.dt,
        cfg.sim.t_grid,
        cfg.sim.bandwidth,
        seed if seed is not None else cfg.sim.seed,
    )
    return Config(cfg.pair, cfg.base_point, sim, cfg.fd, cfg.fit_window,
                  cfg.output_dir, cfg.raw)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HypothesisError, ChartFormError, KalmanError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, PathBlowupError, StabilityError,
            SingularGramianError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args):
    if args.command == "kernel":
        op = kolmogorov_operator(args.s)
        value = kernel_eval(op, args.t, _parse_vec(args.x), _parse_vec(args.y))
        print(json.dumps(_jsonable({"t": args.t, "value": value}), sort_keys=True))
        return EXIT_OK

    if args.command == "verify":
        if args.what == "lemma31":
            worst, ok = run_lemma31(seed=args.seed)
            print(json.dumps(_jsonable({"max_relative_residual": worst, "pass": ok}), sort_keys=True))
            return EXIT_OK if ok else EXIT_CHECK_FAILED
        if args.what == "identity":
            worst, ok = run_identity(n_pairs=args.n, seed=args.seed)
            print(json.dumps(_jsonable({"max_abs_difference": worst, "pass": ok}), sort_keys=True))
            return EXIT_OK if ok else EXIT_CHECK_FAILED
        # convolutions
        S = 1.0
        outdir = args.output_dir or "."
        if args.config:
            cfg = load_config(args.config)
            S = _chart_S(cfg)
            outdir = args.output_dir or cfg.output_dir
        rows, ok = run_convolutions(S)
        os.makedirs(outdir, exist_ok=True)
        _write_convolutions_csv(os.path.join(outdir, "convolutions.csv"), rows)
        for row in rows:
            tag = "PASS" if row["abs_error"] <= CONV_TOL else "FAIL"
            rhs = f" * {row['rhs_op']}" if row["rhs_op"] else ""
            print(f"{tag} {row['lhs_op']}{rhs}: computed {row['computed']:+.9f} "
                  f"expected {row['expected']:+.9f} "
                  f"abs_error {row['abs_error']:.2e}")
        return EXIT_OK if ok else EXIT_CHECK_FAILED

    cfg = _apply_overrides(load_config(args.config), args)

    if args.command == "invariants":
        print(json.dumps(_jsonable(invariants_record(cfg)), sort_keys=True, indent=2))
        return EXIT_OK

    if args.command == "coeff":
        print(json.dumps(_jsonable(coeff_record(cfg, args.method)), sort_keys=True, indent=2))
        return EXIT_OK

    if args.command == "simulate":
        estimates, endpoints, ts = _mc_estimates(cfg)
        os.makedirs(cfg.output_dir, exist_ok=True)
        if args.endpoints_csv:
            _write_endpoints_csv(
                os.path.join(cfg.output_dir, "endpoints.csv"), ts, endpoints
            )
        payload = {
            "t_grid": list(ts),
            "estimates": [
                {"t": t, "value": e.value, "stderr": e.stderr,
                 "n_effective": e.n_effective}
                for t, e in estimates
            ],
        }
        _write_json(os.path.join(cfg.output_dir, "simulation.json"), payload)
        print(json.dumps(_jsonable(payload), sort_keys=True, indent=2))
        return EXIT_OK

    # report
    report, ok, conv_rows, timings = run_report(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_json(os.path.join(cfg.output_dir, "report.json"), report)
    _write_json(os.path.join(cfg.output_dir, "timings.json"), timings)
    _write_convolutions_csv(
        os.path.join(cfg.output_dir, "convolutions.csv"), conv_rows
    )
    print(json.dumps(_jsonable(
        {"all_pass": ok, "report": os.path.join(cfg.output_dir, "report.json")}
    ), sort_keys=True))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
