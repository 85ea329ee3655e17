"""Two-resolution studies behind the frozen tolerances in scenarios/.

Runs each null or near-null quantity at (h, dt) and (h/2, dt/2) or, for the
identity residuals, at dt and dt/10 on the same Brownian paths, and writes
the measured scheme errors to reports/calibration.json.

    python3 scripts/calibrate_tolerances.py [--out reports/calibration.json] [--paths 20]
"""

from __future__ import annotations

import argparse
import json
import os

import numpy as np

from qspde.domain import Interval, make_grid
from qspde.noise import NoisePath, SineModes, build_spectrum, sample_path
from qspde.nonlin import build_coefficients
from qspde.operators import identity
from qspde.solver import Problem, integrate_batch, ito_phi_residual, positive_part_residual, saturated_square, square
from qspde.verify import ItoSpec, max_principle_sides, null_tolerance, run_paths, seeds_for


def sine_problem(spacing, n_modes, **kw):
    g = make_grid(Interval(1.0), spacing)
    spec = build_spectrum(SineModes(2.0), g, n_modes)
    return Problem(g, identity(1), build_coefficients(g, spec, **kw), spec)


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Same Brownian path sampled on a grid ``factor`` times coarser in time."""
    inc = path.increments.reshape(path.steps // factor, factor, -1).sum(axis=1)
    return NoisePath(path.dt * factor, inc, path.seed)


def common_nodes(coarse, fine) -> np.ndarray:
    """Index into the fine interior of every coarse interior node."""
    fx = fine.interior_nodes
    idx = [int(np.argmin(np.sum((fx - x) ** 2, axis=1))) for x in coarse.interior_nodes]
    return np.array(idx)


def identity_residuals(n_paths: int) -> dict:
    out = {}
    for dt in (1e-3, 1e-4):
        P = sine_problem(1 / 32, 8, h0=("additive", 0.5))
        xi = np.sin(2 * np.pi * P.grid.interior_nodes[:, 0])
        steps = int(round(0.1 / dt))
        trajs = integrate_batch(P, xi, [sample_path(8, steps, dt, s) for s in seeds_for(13, n_paths, 0)])
        out[f"dt={dt:g}"] = {
            "positive_part": float(np.mean([positive_part_residual(t, square()).relative for t in trajs])),
            "phi_saturated": float(np.mean([ito_phi_residual(t, saturated_square()).relative for t in trajs])),
        }
    return out


def comparison_gap(n_paths: int) -> dict:
    """Scheme error of u2 - u1 for the f-shift scenario, relative to max |xi|."""
    shift = 0.5
    T, dt = 0.1, 1e-3
    gaps = []
    res = {}
    for sp, d in ((1 / 32, dt), (1 / 64, dt / 2)):
        P1 = sine_problem(sp, 4, f="sine-reaction(0.3)", h="multiplicative-noise(0.3)")
        P2 = Problem(P1.grid, P1.a, P1.coeffs.shifted_f(lambda t, x, y, z: shift + 0.0 * y), P1.spectrum)
        res[sp] = (P1, P2, d)
    (c1, c2, dc), (f1, f2, df) = res[1 / 32], res[1 / 64]
    idx = common_nodes(c1.grid, f1.grid)
    xi_c = np.sin(np.pi * c1.grid.interior_nodes[:, 0])
    xi_f = np.sin(np.pi * f1.grid.interior_nodes[:, 0])
    fine_paths = [sample_path(4, int(round(T / df)), df, s) for s in seeds_for(21, n_paths, 0)]
    coarse_paths = [coarsen(p, 2) for p in fine_paths]
    dc_ = [b.u - a.u for a, b in zip(integrate_batch(c1, xi_c, coarse_paths), integrate_batch(c2, xi_c, coarse_paths))]
    df_ = [b.u - a.u for a, b in zip(integrate_batch(f1, xi_f, fine_paths), integrate_batch(f2, xi_f, fine_paths))]
    for a, b in zip(dc_, df_):
        gaps.append(float(np.abs(a - b[::2][:, idx]).max()))
    return {"max_gap_over_scale": max(gaps), "mean_gap_over_scale": float(np.mean(gaps)),
            "frozen_factor": 5e-3, "min_difference_coarse": float(min(a.min() for a in dc_))}


def max_principle_null(n_paths: int) -> dict:
    spec = ItoSpec(1.5, 0.5, [0.3, 0.2])
    lhs = {}
    for h, dt in ((1 / 32, 1e-3), (1 / 64, 5e-4)):
        P = sine_problem(h, 2, f0=0.5, h0=("mode-constant", [0.3, 0.2]))
        xi = np.sin(np.pi * P.grid.interior_nodes[:, 0])
        sides = max_principle_sides(P, spec, 0.0, 2.0)
        vals = run_paths(P, xi, seeds_for(31, n_paths, 0), int(round(0.1 / dt)), dt, sides)
        lhs[f"h={h:g}"] = float(np.mean([v[0] for v in vals]))
    return {"mean_lhs": lhs, "tol_null": null_tolerance(list(lhs.values()))}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="reports/calibration.json")
    ap.add_argument("--paths", type=int, default=20)
    args = ap.parse_args()
    report = {
        "schema_version": "1.0",
        "paths": args.paths,
        "identity_residuals": identity_residuals(args.paths),
        "comparison": comparison_gap(args.paths),
        "max_principle_null": max_principle_null(args.paths),
    }
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
