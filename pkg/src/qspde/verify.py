"""Monte Carlo harnesses for the a-priori, positive-part, comparison, uniform-norm
and maximum-principle inequalities.

Constants that are only known to exist are handled by fit-then-assert: a
constant k is fitted with headroom on a calibration ensemble and then checked
on a disjoint evaluation ensemble. Per-path quantities are computed for both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .green import energy_norm_sq
from .noise import NoisePath, path_seed, sample_ito_process, sample_path
from .nonlin import NonlinearCoefficients, contraction_margins
from .norms import SpaceTimeField, dual_sharp_upper, lpq_norm, theta_dual_upper
from .solver import (
    GateError,
    LinearData,
    Problem,
    TrajectoryField,
    integrate_batch,
    map_chunks,
)

CALIBRATION, EVALUATION = 0, 1


@dataclass
class EstimateReport:
    theorem: str
    lhs_cal: list
    rhs_cal: list
    lhs_eval: list
    rhs_eval: list
    k: float
    headroom: float
    tol: float
    violations: int
    seeds_cal: list
    seeds_eval: list
    extra: dict = field(default_factory=dict)

    @property
    def n_eval(self) -> int:
        return len(self.lhs_eval)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and math.isfinite(self.k)

    def summary(self) -> dict:
        return {
            "theorem": self.theorem,
            "n_calibration": len(self.lhs_cal),
            "n_evaluation": self.n_eval,
            "k": self.k,
            "headroom": self.headroom,
            "tol": self.tol,
            "violations": self.violations,
            "passed": self.passed,
            "mean_lhs_eval": float(np.mean(self.lhs_eval)) if self.lhs_eval else 0.0,
            "mean_rhs_eval": float(np.mean(self.rhs_eval)) if self.rhs_eval else 0.0,
            **{k: v for k, v in self.extra.items() if np.isscalar(v) or isinstance(v, (str, bool))},
        }

    def rows(self) -> list:
        out = []
        for role, seeds, lhs, rhs in (("calibration", self.seeds_cal, self.lhs_cal, self.rhs_cal),
                                      ("evaluation", self.seeds_eval, self.lhs_eval, self.rhs_eval)):
            for s, l, r in zip(seeds, lhs, rhs):
                viol = role == "evaluation" and l > self.k * r + self.tol
                out.append([self.theorem, role, s, repr(float(l)), repr(float(r)), int(viol)])
        return out


def fit_constant(lhs: Sequence[float], rhs: Sequence[float], headroom: float = 2.0, tol: float = 0.0) -> float:
    """Smallest k with lhs <= k rhs + tol on the sample, times ``headroom``."""
    k = 0.0
    for l, r in zip(lhs, rhs):
        if l <= tol:
            continue
        if r <= 0:
            return math.inf
        k = max(k, (l - tol) / r)
    return headroom * k


def count_violations(lhs, rhs, k: float, tol: float) -> int:
    return int(sum(l > k * r + tol for l, r in zip(lhs, rhs)))


def seeds_for(master: int, n: int, stream: int) -> list[int]:
    return [path_seed(master, j, stream) for j in range(n)]


def run_paths(problem: Problem, xi: np.ndarray, seeds: Sequence[int], steps: int, dt: float,
              per_path: Callable[[TrajectoryField], tuple], workers: int = 1, chunk: int = 8,
              source=None) -> list:
    """Integrate one trajectory per seed and map ``per_path`` over them in seed order."""
    K = max(problem.n_modes, 1)

    def work(batch_seeds):
        paths = [sample_path(K, steps, dt, s) for s in batch_seeds]
        trajs = integrate_batch(problem, xi, paths, source)
        return [per_path(t) for t in trajs]

    return map_chunks(work, list(seeds), workers, chunk)


def fit_then_assert(theorem: str, problem: Problem, xi: np.ndarray, steps: int, dt: float,
                    sides: Callable[[TrajectoryField], tuple], n_cal: int, n_eval: int, seed: int,
                    headroom: float = 2.0, tol: float = 1e-12, workers: int = 1, source=None) -> EstimateReport:
    s_cal = seeds_for(seed, n_cal, CALIBRATION)
    s_ev = seeds_for(seed, n_eval, EVALUATION)
    cal = run_paths(problem, xi, s_cal, steps, dt, sides, workers, source=source)
    ev = run_paths(problem, xi, s_ev, steps, dt, sides, workers, source=source)
    lc, rc = [c[0] for c in cal], [c[1] for c in cal]
    le, re = [e[0] for e in ev], [e[1] for e in ev]
    k = fit_constant(lc, rc, headroom, tol)
    viol = count_violations(le, re, k, tol) if math.isfinite(k) else len(le)
    return EstimateReport(theorem, lc, rc, le, re, k, headroom, tol, viol, s_cal, s_ev)


# --------------------------------------------------------------------------- per-path sides


def _zero_sources(co: NonlinearCoefficients, grid, t: float):
    x = grid.interior_nodes
    y = np.zeros(grid.n_interior)
    z = np.zeros((grid.n_interior, grid.dim))
    return co.eval_f(t, x, y, z), co.eval_g(t, x, y, z), co.eval_h(t, x, y, z)


def linear_data_from_sources(co: NonlinearCoefficients, grid, steps: int, dt: float) -> LinearData:
    """Sources (f0, g0, h0) of ``co`` sampled at left points as linear data."""
    parts = [_zero_sources(co, grid, k * dt) for k in range(steps)]
    return LinearData(*(np.array([p[i] for p in parts]) for i in range(3)))


def apriori_sides(traj: TrajectoryField) -> tuple[float, float]:
    """|u|_T^2 against |xi|^2 + int (|w|^2 + |w1|^2 + sum |w2_i|^2) for linear data."""
    grid, dt, hd = traj.grid, traj.dt, traj.grid.cell_volume
    src = traj.source
    if not isinstance(src, LinearData):
        raise TypeError("a-priori sides need linear data")
    rhs = hd * float(traj.u[0] @ traj.u[0])
    for arr in (src.w1, src.w2, src.w):
        if arr is not None:
            rhs += dt * hd * float(np.sum(arr[: traj.steps] ** 2))
    return energy_norm_sq(grid, traj.u, dt), rhs


def l2_estimate_sides(traj: TrajectoryField) -> tuple[float, float]:
    """|u|_T^2 against |xi|^2 + |f0|^2 + ||g0||^2 + ||h0||^2 in L2 over [0, T]."""
    grid, dt, hd = traj.grid, traj.dt, traj.grid.cell_volume
    co = traj.source
    rhs = hd * float(traj.u[0] @ traj.u[0])
    for k in range(traj.steps):
        f0, g0, h0 = _zero_sources(co, grid, k * dt)
        rhs += dt * hd * float(np.sum(f0**2) + np.sum(g0**2) + np.sum(h0**2))
    return energy_norm_sq(grid, traj.u, dt), rhs


def positive_part_sides(traj: TrajectoryField) -> tuple[float, float]:
    """Positive-part energy against the indicator-restricted source terms."""
    grid, dt, hd = traj.grid, traj.dt, traj.grid.cell_volume
    co = traj.source
    up = np.maximum(traj.u, 0.0)
    lhs = energy_norm_sq(grid, up, dt)
    F = np.empty((traj.steps, grid.n_interior))
    gq = hq = 0.0
    for k in range(traj.steps):
        f0, g0, h0 = _zero_sources(co, grid, k * dt)
        ind = (traj.u[k] > 0).astype(float)
        F[k] = ind * np.maximum(f0, 0.0)
        gq += dt * hd * float(ind @ np.sum(g0**2, axis=-1))
        hq += dt * hd * float(ind @ np.sum(h0**2, axis=-1))
    xi_p = hd * float(up[0] @ up[0])
    fd = dual_sharp_upper(SpaceTimeField.from_interior(grid, F, dt))
    return lhs, xi_p + fd**2 + gq + hq


def lp_uniform_sides(theta: float, p: float) -> Callable[[TrajectoryField], tuple]:
    def sides(traj: TrajectoryField) -> tuple[float, float]:
        grid, dt = traj.grid, traj.dt
        co = traj.source
        lhs = float(np.abs(traj.u).max()) ** p
        F = np.empty((traj.steps, grid.n_interior))
        G = np.empty_like(F)
        H = np.empty_like(F)
        for k in range(traj.steps):
            f0, g0, h0 = _zero_sources(co, grid, k * dt)
            F[k], G[k], H[k] = f0, np.sum(g0**2, axis=-1), np.sum(h0**2, axis=-1)
        rhs = float(np.abs(traj.u[0]).max()) ** p
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, F, dt), theta) ** p
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, G, dt), theta) ** (p / 2)
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, H, dt), theta) ** (p / 2)
        return lhs, rhs

    return sides


# --------------------------------------------------------------------------- harnesses


def run_apriori_estimate(problem: Problem, xi, data: LinearData, steps: int, dt: float, n_cal: int,
                         n_eval: int, seed: int, k: float | None = None, headroom: float = 2.0,
                         workers: int = 1) -> EstimateReport:
    """Linear a-priori estimate. With ``k`` given, only the evaluation ensemble is run."""
    if k is None:
        return fit_then_assert("apriori", problem, xi, steps, dt, apriori_sides, n_cal, n_eval, seed,
                               headroom, workers=workers, source=data)
    s_ev = seeds_for(seed, n_eval, EVALUATION)
    ev = run_paths(problem, xi, s_ev, steps, dt, apriori_sides, workers, source=data)
    le, re = [e[0] for e in ev], [e[1] for e in ev]
    return EstimateReport("apriori", [], [], le, re, k, headroom, 1e-12,
                          count_violations(le, re, k, 1e-12), [], s_ev)


def run_l2_estimate(problem: Problem, xi, steps: int, dt: float, n_cal: int, n_eval: int, seed: int,
                    headroom: float = 2.0, workers: int = 1) -> EstimateReport:
    _gate_basic(problem)
    return fit_then_assert("l2_estimate", problem, xi, steps, dt, l2_estimate_sides, n_cal, n_eval,
                           seed, headroom, workers=workers)


def run_positive_part_estimate(problem: Problem, xi, steps: int, dt: float, n_cal: int, n_eval: int,
                               seed: int, headroom: float = 2.0, tol: float = 1e-12,
                               workers: int = 1) -> EstimateReport:
    _gate_basic(problem)
    return fit_then_assert("positive_part", problem, xi, steps, dt, positive_part_sides, n_cal, n_eval,
                           seed, headroom, tol, workers)


def run_lp_uniform_estimate(problem: Problem, xi, steps: int, dt: float, n_cal: int, n_eval: int,
                            seed: int, theta: float = 0.0, p: float = 2.0, headroom: float = 2.0,
                            workers: int = 1) -> EstimateReport:
    _check_theta_p(theta, p)
    co = problem.coeffs
    basic, strong = contraction_margins(problem.a.lam, co.alpha, co.beta)
    if strong <= 0:
        raise GateError(f"alpha + beta^2/2 + 72 beta^2 < lambda fails (margin {strong:.6g})")
    rep = fit_then_assert("lp_uniform", problem, xi, steps, dt, lp_uniform_sides(theta, p), n_cal,
                          n_eval, seed, headroom, workers=workers)
    rep.extra.update({"theta": theta, "p": p, "margin_strong": strong})
    return rep


def _gate_basic(problem: Problem) -> None:
    co = problem.coeffs
    basic, _ = contraction_margins(problem.a.lam, co.alpha, co.beta)
    if basic <= 0:
        raise GateError(f"alpha + beta^2/2 < lambda fails (margin {basic:.6g})")


def _check_theta_p(theta: float, p: float) -> None:
    if p < 2:
        raise ValueError("p must be >= 2")
    if not 0 <= theta < 1:
        raise ValueError("theta must lie in [0, 1)")


# --------------------------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    min_difference: list
    violation_fraction: float
    tol: float
    seeds: list
    points: int
    violating_points: int

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= 0.01

    def summary(self) -> dict:
        return {
            "theorem": "comparison",
            "n_paths": len(self.seeds),
            "min_difference": float(min(self.min_difference)) if self.min_difference else 0.0,
            "violation_fraction": self.violation_fraction,
            "tol": self.tol,
            "passed": self.passed,
        }

    def rows(self) -> list:
        return [["comparison", s, repr(float(m))] for s, m in zip(self.seeds, self.min_difference)]


def run_comparison(problem1: Problem, problem2: Problem, xi1, xi2, steps: int, dt: float, n_paths: int,
                   seed: int, tol: float, workers: int = 1, chunk: int = 8) -> ComparisonReport:
    """Solve both problems on shared noise and measure how often u1 > u2 + tol.

    Requires xi1 <= xi2 and g, h shared; f1 <= f2 is checked along every u2.
    """
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if np.any(xi1 > xi2):
        raise ValueError("comparison needs xi1 <= xi2 node-wise")
    if problem1.coeffs.g is not problem2.coeffs.g or problem1.coeffs.h is not problem2.coeffs.h:
        raise ValueError("comparison needs identical g and h")
    _gate_basic(problem1)
    _gate_basic(problem2)
    seeds = seeds_for(seed, n_paths, EVALUATION)
    K = max(problem1.n_modes, 1)
    grid = problem1.grid
    x = grid.interior_nodes

    def work(batch_seeds):
        paths = [sample_path(K, steps, dt, s) for s in batch_seeds]
        t1 = integrate_batch(problem1, xi1, paths)
        t2 = integrate_batch(problem2, xi2, paths)
        out = []
        for a, b in zip(t1, t2):
            for k in range(steps):
                y = b.u[k]
                z = grid.gradient(y)
                f1 = problem1.coeffs.eval_f(k * dt, x, y, z)
                f2 = problem2.coeffs.eval_f(k * dt, x, y, z)
                if np.any(f1 > f2 + 1e-14):
                    raise ValueError(f"f1 > f2 along u2 at step {k}; scenario rejected")
            diff = b.u - a.u
            out.append((float(diff.min()), int(np.sum(diff < -tol)), diff.size))
        return out

    res = map_chunks(work, seeds, workers, chunk)
    viol = sum(r[1] for r in res)
    pts = sum(r[2] for r in res)
    return ComparisonReport([r[0] for r in res], viol / pts, tol, seeds, pts, viol)


# --------------------------------------------------------------------------- maximum principle


@dataclass(frozen=True)
class ItoSpec:
    m: float
    b: float | Callable = 0.0
    sigma: Sequence[float] | Callable = ()


def max_principle_sides(problem: Problem, spec: ItoSpec, theta: float, p: float):
    """Per-path sides with the dominating process M sampled on the path of the trajectory."""
    grid = problem.grid
    co = problem.coeffs
    x = grid.interior_nodes

    def sides(traj: TrajectoryField) -> tuple[float, float]:
        dt = traj.dt
        sig = spec.sigma if callable(spec.sigma) else np.asarray(spec.sigma, dtype=float)
        if not callable(sig) and sig.size == 0:
            sig = np.zeros(1)
        proc = sample_ito_process(spec.m, spec.b, sig, traj.path)
        M = proc.values
        if np.any(M < 0):
            raise ValueError("dominating process is negative on the boundary; (u - M)^+ is not admissible")
        lhs = float(np.maximum(traj.u - M[:, None], 0.0).max()) ** p
        F = np.empty((traj.steps, grid.n_interior))
        G = np.empty_like(F)
        H = np.empty_like(F)
        z = np.zeros((grid.n_interior, grid.dim))
        K = co.n_modes
        for k in range(traj.steps):
            y = np.full(grid.n_interior, M[k])
            t = k * dt
            F[k] = np.maximum(co.eval_f(t, x, y, z) - proc.b[k], 0.0)
            G[k] = np.sum(co.eval_g(t, x, y, z) ** 2, axis=-1)
            sk = np.zeros(K)
            kk = min(K, proc.sigma.shape[1])
            sk[:kk] = proc.sigma[k, :kk]
            H[k] = np.sum((co.eval_h(t, x, y, z) - sk) ** 2, axis=-1)
        rhs = float(np.maximum(traj.u[0] - spec.m, 0.0).max()) ** p
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, F, dt), theta) ** p
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, G, dt), theta) ** (p / 2)
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, H, dt), theta) ** (p / 2)
        return lhs, rhs

    return sides


def run_max_principle(problem: Problem, xi, spec: ItoSpec, steps: int, dt: float, n_cal: int, n_eval: int,
                      seed: int, theta: float = 0.0, p: float = 2.0, headroom: float = 2.0,
                      tol: float = 1e-12, workers: int = 1) -> EstimateReport:
    _check_theta_p(theta, p)
    co = problem.coeffs
    _, strong = contraction_margins(problem.a.lam, co.alpha, co.beta)
    if strong <= 0:
        raise GateError(f"alpha + beta^2/2 + 72 beta^2 < lambda fails (margin {strong:.6g})")
    rep = fit_then_assert("max_principle", problem, xi, steps, dt, max_principle_sides(problem, spec, theta, p),
                          n_cal, n_eval, seed, headroom, tol, workers)
    rep.extra.update({"theta": theta, "p": p, "mean_lhs": float(np.mean(rep.lhs_eval))})
    return rep


def constant_bound_sides(problem: Problem, m: float, theta: float, p: float):
    """Sides of the estimate for (u - m)^+ with a constant bound m and no noise."""
    grid = problem.grid
    co = problem.coeffs
    x = grid.interior_nodes

    def sides(traj: TrajectoryField) -> tuple[float, float]:
        dt = traj.dt
        y = np.full(grid.n_interior, float(m))
        z = np.zeros((grid.n_interior, grid.dim))
        lhs = float(np.maximum(traj.u - m, 0.0).max()) ** p
        fs = [np.maximum(co.eval_f(k * dt, x, y, z) - 0.0, 0.0) for k in range(traj.steps)]
        gs = [np.sum(co.eval_g(k * dt, x, y, z) ** 2, axis=-1) for k in range(traj.steps)]
        hs = [np.sum((co.eval_h(k * dt, x, y, z) - np.zeros(co.n_modes)) ** 2, axis=-1)
              for k in range(traj.steps)]
        rhs = float(np.maximum(traj.u[0] - m, 0.0).max()) ** p
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, np.array(fs), dt), theta) ** p
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, np.array(gs), dt), theta) ** (p / 2)
        rhs += theta_dual_upper(SpaceTimeField.from_interior(grid, np.array(hs), dt), theta) ** (p / 2)
        return lhs, rhs

    return sides


def run_constant_bound(problem: Problem, xi, m: float, steps: int, dt: float, n_cal: int, n_eval: int,
                       seed: int, theta: float = 0.0, p: float = 2.0, headroom: float = 2.0,
                       tol: float = 1e-12, workers: int = 1) -> EstimateReport:
    """Deterministic bound by a constant m (no Ito process machinery involved)."""
    _check_theta_p(theta, p)
    return fit_then_assert("constant_bound", problem, xi, steps, dt, constant_bound_sides(problem, m, theta, p),
                           n_cal, n_eval, seed, headroom, tol, workers)


def null_tolerance(values: Sequence[float], floor: float = 1e-12) -> float:
    """Scheme-error tolerance from null-scenario LHS values at two resolutions."""
    return max(2.0 * max(values, default=0.0), floor)


def lhs_statistics(report: EstimateReport) -> tuple[np.ndarray, np.ndarray]:
    return np.sort(np.asarray(report.lhs_cal)), np.sort(np.asarray(report.lhs_eval))


def coupled_paths_identical(seed: int, K: int, steps: int, dt: float) -> bool:
    """Re-derive a path from its seed and confirm bit-identical increments."""
    a: NoisePath = sample_path(K, steps, dt, seed)
    b: NoisePath = sample_path(K, steps, dt, seed)
    return bool(np.array_equal(a.increments, b.increments))
