"""Command-line front end: ``qspde run scenario.json``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 when the
scenario is invalid or refused by a structural gate.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Callable

import numpy as np

from . import green, solver, verify
from .domain import Interval, Rectangle
from .noise import path_seed, sample_path, zero_path
from .nonlin import contraction_margins
from .norms import SpaceTimeField, lpq_norm
from .scenario import Built, Scenario, ScenarioError, build, parse_scenario, scenario_dict

SCHEMA_VERSION = "1.0"


class Outputs:
    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header: list, rows) -> None:
        path = os.path.join(self.root, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow(r)
        self.files.append(name)

    def json(self, name: str, obj: dict) -> None:
        path = os.path.join(self.root, name)
        with open(path, "w") as fh:
            fh.write(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")
        self.files.append(name)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _f(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------- harnesses


def _heat_exact(s: Scenario, b: Built):
    nl = s.nonlinear
    plain = (s.coefficient.get("preset", "identity") == "identity" and s.initial.get("preset") == "sine"
             and all(nl.get(k, "zero") == "zero" for k in ("f", "g", "h"))
             and nl.get("f0") is None and nl.get("g0") is None and nl.get("h0") is None
             and isinstance(b.grid.shape, (Interval, Rectangle)))
    if not plain:
        return None
    k = int(s.initial.get("k", 1))
    L = b.grid.shape.upper - b.grid.shape.lower
    rate = float(s.coefficient.get("scale", 1.0)) * np.pi**2 * float(np.sum((k / L) ** 2))
    return lambda t: np.exp(-rate * t)


def _one_path(s: Scenario, b: Built):
    if b.problem.n_modes == 0:
        return zero_path(0, s.steps, s.dt)
    return sample_path(b.problem.n_modes, s.steps, s.dt, path_seed(s.seed, 0, verify.EVALUATION))


def run_trajectory(s: Scenario, b: Built, out: Outputs, workers: int) -> dict:
    traj = solver.integrate(b.problem, b.xi, _one_path(s, b))
    every = int(s.harness.get("snapshot_every", max(1, s.steps // 10)))
    x = b.grid.interior_nodes
    rows = []
    for k in range(0, traj.steps + 1, every):
        for i in range(b.grid.n_interior):
            rows.append([_f(traj.times[k])] + [_f(v) for v in x[i]] + [_f(traj.u[k, i])])
    out.csv("trajectory.csv", ["t"] + [f"x{j}" for j in range(b.grid.dim)] + ["u"], rows)
    exact = _heat_exact(s, b)
    denom = float(b.xi @ b.xi)
    amp_rows, err = [], 0.0
    for k in range(0, traj.steps + 1, every):
        t = traj.times[k]
        amp = float(traj.u[k] @ b.xi) / denom if denom > 0 else 0.0
        row = [_f(t), _f(amp)]
        if exact is not None:
            e = exact(t)
            err = max(err, abs(amp - e))
            row += [_f(e), _f(abs(amp - e))]
        amp_rows.append(row)
    header = ["t", "amplitude"] + (["exact", "abs_error"] if exact is not None else [])
    out.csv("amplitude.csv", header, amp_rows)
    tol = float(s.tolerances.get("amplitude", 1e-3))
    passed = bool(np.all(np.isfinite(traj.u))) and (exact is None or err <= tol)
    res = {"passed": passed, "final_max_abs": float(np.abs(traj.u[-1]).max())}
    if exact is not None:
        res.update({"amplitude_max_error": err, "amplitude_tol": tol})
    return res


def run_green(s: Scenario, b: Built, out: Outputs, workers: int) -> dict:
    hz = s.harness
    y = hz.get("y", (0.5 * (b.grid.shape.lower + b.grid.shape.upper)).tolist())
    tab = green.compute_green(b.a, b.grid, float(hz.get("s", 0.0)), y, s.steps, s.dt)
    d = b.grid.dim
    env = green.GaussianEnvelope(float(hz.get("envelope_C", (4 * np.pi * b.a.lam) ** (-d / 2))),
                                 float(hz.get("envelope_rho", 2.0 / b.a.Lam)), s.T)
    tol = float(s.tolerances.get("envelope", 1e-3))
    t_min = hz.get("t_min", 0.0)
    if t_min == "resolved":
        t_min = green.resolved_time(b.grid, s.dt, tol, b.a.lam)
    chk = green.check_envelope(tab, env, tol, float(t_min))
    out.csv("envelope_ratio.csv", ["t", "max_ratio"], [[_f(t), _f(r)] for t, r in chk.per_time])
    out.csv("green_mass.csv", ["t", "mass"], [[_f(t), _f(m)] for t, m in zip(tab.times, tab.mass())])
    res = {"passed": chk.passed, "max_ratio": chk.max_ratio, "t_min": chk.t_min, "C": env.C, "rho": env.rho,
           "argmax_t": chk.argmax[0] if chk.argmax else None}
    if "expect_point" in hz:
        ep = hz["expect_point"]
        val = tab.at(float(ep["t"]), ep["x"])
        ptol = float(s.tolerances.get("point", 3e-3))
        ok = abs(val - float(ep["value"])) <= ptol
        res.update({"point_value": val, "point_expected": float(ep["value"]), "point_ok": ok})
        res["passed"] = res["passed"] and ok
    return res


def _gate(b: Built) -> None:
    co = b.problem.coeffs
    basic, _ = contraction_margins(b.a.lam, co.alpha, co.beta)
    if basic <= 0:
        raise solver.GateError(
            f"refused: contraction condition alpha + beta^2/2 < lambda violated "
            f"(alpha={co.alpha}, beta={co.beta}, lambda={b.a.lam}, margin={basic:.6g})"
        )


def run_energy(s: Scenario, b: Built, out: Outputs, workers: int) -> dict:
    _gate(b)
    which = s.harness.get("identity", "energy")
    n = int(s.harness.get("paths", 1))
    seeds = verify.seeds_for(s.seed, n, verify.EVALUATION)
    if which == "energy":
        fn: Callable = solver.energy_identity_residual
    elif which == "phi":
        phi = solver.saturated_square()
        fn = lambda t: solver.ito_phi_residual(t, phi)  # noqa: E731
    elif which == "positive-part":
        phi = solver.square()
        fn = lambda t: solver.positive_part_residual(t, phi)  # noqa: E731
    else:
        raise ScenarioError(f"harness.identity: unknown identity {which!r}")
    recs = verify.run_paths(b.problem, b.xi, seeds, s.steps, s.dt, fn, workers)
    out.csv("residuals.csv", ["id", "L", "R", "residual", "relative", "seed"],
            [[r.identity, _f(r.left), _f(r.right), _f(r.residual), _f(r.relative), r.seed] for r in recs])
    rel = float(np.mean([r.relative for r in recs]))
    tol = float(s.tolerances.get("residual", 0.05))
    return {"passed": rel <= tol, "identity": which, "mean_relative_residual": rel, "tol": tol,
            "paths": n}


def run_picard(s: Scenario, b: Built, out: Outputs, workers: int) -> dict:
    _gate(b)
    path = _one_path(s, b)
    if path.n_modes == 0:
        path = zero_path(0, s.steps, s.dt)
    tol = float(s.tolerances.get("picard", 1e-10))
    traj, trace = solver.picard_solve(b.problem, b.xi, path, tol=tol)
    direct = solver.integrate(b.problem, b.xi, path)
    diff = SpaceTimeField.from_interior(b.grid, traj.u[1:] - direct.u[1:], s.dt)
    ref = SpaceTimeField.from_interior(b.grid, direct.u[1:], s.dt)
    rel = lpq_norm(diff, 2, 2) / max(lpq_norm(ref, 2, 2), 1e-300)
    out.csv("picard_trace.csv", ["iteration", "distance"], [[i + 1, _f(dd)] for i, dd in enumerate(trace.distances)])
    agree = float(s.tolerances.get("agreement", 2e-2))
    p = trace.params
    return {"passed": trace.converged and rel <= agree, "iterations": trace.iterations,
            "relative_l2l2_difference": rel, "eps": p.eps, "gamma": p.gamma, "delta": p.delta,
            "contraction_bound": p.bound}


def run_comparison(s: Scenario, b: Built, out: Outputs, workers: int) -> dict:
    _gate(b)
    shift = float(s.harness.get("f_shift", 0.0))
    xshift = float(s.harness.get("xi_shift", 0.0))
    if shift < 0 or xshift < 0:
        raise ScenarioError("harness.f_shift and harness.xi_shift must be non-negative")
    co2 = b.problem.coeffs.shifted_f(lambda t, x, y, z: shift + 0.0 * y) if shift else b.problem.coeffs
    p2 = solver.Problem(b.grid, b.a, co2, b.spectrum)
    xi2 = b.xi + xshift
    scale = max(float(np.abs(b.xi).max(initial=0.0)), float(np.abs(xi2).max(initial=0.0)), 1e-300)
    tol = float(s.tolerances.get("comparison", 5e-3)) * scale
    n = int(s.harness.get("paths", 200))
    rep = verify.run_comparison(b.problem, p2, b.xi, xi2, s.steps, s.dt, n, s.seed, tol, workers)
    out.csv("comparison.csv", ["theorem", "seed", "min_difference"], rep.rows())
    return rep.summary()


def _fit_report(rep: verify.EstimateReport, out: Outputs) -> dict:
    out.csv("estimate.csv", ["theorem", "role", "seed", "lhs", "rhs", "violation"], rep.rows())
    return rep.summary()


def run_estimate(s: Scenario, b: Built, out: Outputs, workers: int) -> dict:
    hz = s.harness
    n_cal = int(hz.get("calibration", 100))
    n_ev = int(hz.get("evaluation", 200))
    head = float(hz.get("headroom", 2.0))
    kind = s.harness_type
    _gate(b)
    if kind == "positive_part":
        rep = verify.run_positive_part_estimate(b.problem, b.xi, s.steps, s.dt, n_cal, n_ev, s.seed, head,
                                                workers=workers)
    elif kind == "lp_uniform":
        rep = verify.run_lp_uniform_estimate(b.problem, b.xi, s.steps, s.dt, n_cal, n_ev, s.seed, s.theta, s.p,
                                             head, workers)
    elif kind == "l2_estimate":
        rep = verify.run_l2_estimate(b.problem, b.xi, s.steps, s.dt, n_cal, n_ev, s.seed, head, workers)
    elif kind == "apriori":
        nl = s.nonlinear
        if any(nl.get(k, "zero") != "zero" for k in ("f", "g", "h")):
            raise ScenarioError("harness apriori needs a linear problem: nonlinear.f, g, h must be zero")
        data = verify.linear_data_from_sources(b.problem.coeffs, b.grid, s.steps, s.dt)
        rep = verify.run_apriori_estimate(b.problem, b.xi, data, s.steps, s.dt, n_cal, n_ev, s.seed,
                                          headroom=head, workers=workers)
    else:
        spec = verify.ItoSpec(float(hz.get("m", 0.0)), float(hz.get("b", 0.0)), list(hz.get("sigma", [])))
        tol = float(s.tolerances.get("null", 1e-12))
        rep = verify.run_max_principle(b.problem, b.xi, spec, s.steps, s.dt, n_cal, n_ev, s.seed, s.theta, s.p,
                                       head, tol, workers)
    return _fit_report(rep, out)


RUNNERS = {
    "trajectory": run_trajectory,
    "green": run_green,
    "energy": run_energy,
    "picard": run_picard,
    "comparison": run_comparison,
    "max_principle": run_estimate,
    "positive_part": run_estimate,
    "lp_uniform": run_estimate,
    "l2_estimate": run_estimate,
    "apriori": run_estimate,
}


def run_scenario(s: Scenario, out_dir: str, workers: int = 1) -> int:
    """Run the scenario's harness, write reports under ``out_dir``; returns the exit code."""
    out = Outputs(out_dir)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "scenario": s.name,
        "harness": s.harness_type,
        "master_seed": s.seed,
        "resolution": {"h": s.h, "dt": s.dt, "T": s.T},
        "config": scenario_dict(s),
    }
    code = 0
    try:
        b = build(s)
        res = RUNNERS[s.harness_type](s, b, out, workers)
        summary["status"] = "pass" if res.get("passed") else "fail"
        summary["results"] = res
        code = 0 if res.get("passed") else 1
    except (solver.GateError, ScenarioError) as exc:
        summary["status"] = "refused"
        summary["error"] = str(exc)
        code = 2
    except (solver.BlowUpError, solver.ContractionError, ValueError, FloatingPointError) as exc:
        summary["status"] = "error"
        summary["error"] = f"{type(exc).__name__}: {exc}"
        code = 1
    summary["files"] = sorted(out.files)
    out.json("summary.json", summary)
    return code


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="qspde", description="Scenario runner for the stochastic PDE laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.add_argument("--workers", type=int, default=1, help="threads for ensemble runs")
    r.add_argument("--out-dir", default="reports", help="directory for report files")
    r.add_argument("--refine", action="store_true", help="halve h and dt")
    args = ap.parse_args(argv)
    try:
        s = parse_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        s = s.with_seed(args.seed)
    name = s.name
    if args.refine:
        s = s.refined()
        name += "-refined"
    code = run_scenario(s, os.path.join(args.out_dir, name), max(1, args.workers))
    with open(os.path.join(args.out_dir, name, "summary.json")) as fh:
        status = json.load(fh).get("status")
    print(f"{name}: {status} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
