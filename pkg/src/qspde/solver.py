"""Semi-implicit integration, the Picard map and discrete Ito-identity residuals.

One step of the scheme reads

    (I - dt A_{t+dt}) u_{k+1} = u_k + dt [f_k + div_h g_k] + sum_i h_{i,k} dB^i_k

with f, g, h evaluated at (t_k, u_k, grad_h u_k) and grad_h the centred
difference with zero extension. ``div_h`` is minus the adjoint of ``grad_h`` so
that (u, div_h g) = -(grad_h u, g) holds exactly on the lattice.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import SpatialGrid
from .noise import NoisePath, NoiseSpectrum, zero_path
from .nonlin import NonlinearCoefficients
from .norms import gradient_sq
from .operators import CoefficientField, ImplicitStepper, assemble

BLOWUP_FACTOR = 1e6


class BlowUpError(RuntimeError):
    pass


class ContractionError(RuntimeError):
    def __init__(self, message: str, trace: "PicardTrace"):
        super().__init__(message)
        self.trace = trace


class GateError(ValueError):
    """Raised when the structural condition needed by a solver or estimate fails."""


@dataclass(frozen=True, eq=False)
class Problem:
    grid: SpatialGrid
    a: CoefficientField
    coeffs: NonlinearCoefficients
    spectrum: NoiseSpectrum | None = None

    @property
    def n_modes(self) -> int:
        return self.coeffs.n_modes


@dataclass(frozen=True, eq=False)
class LinearData:
    """Data of a linear problem sampled at left points: w1 (steps, n), w2 (steps, n, d),
    w (steps, n, K). Missing entries are zero."""

    w1: np.ndarray | None = None
    w2: np.ndarray | None = None
    w: np.ndarray | None = None

    def at(self, k: int, grid: SpatialGrid, K: int, batch: tuple = ()):
        n, d = grid.n_interior, grid.dim
        f = np.zeros(batch + (n,)) if self.w1 is None else np.broadcast_to(self.w1[k], batch + (n,))
        g = np.zeros(batch + (n, d)) if self.w2 is None else np.broadcast_to(self.w2[k], batch + (n, d))
        h = np.zeros(batch + (n, K)) if self.w is None else np.broadcast_to(self.w[k], batch + (n, K))
        return f, g, h

    def scaled(self, s: float) -> "LinearData":
        return LinearData(*(None if v is None else s * v for v in (self.w1, self.w2, self.w)))


Source = NonlinearCoefficients | LinearData


def data_along(source: Source, grid: SpatialGrid, t: float, k: int, u: np.ndarray, K: int):
    """(f, g, h) at step k for the state u (batched over leading axes)."""
    if isinstance(source, LinearData):
        return source.at(k, grid, K, u.shape[:-1])
    z = grid.gradient(u)
    x = grid.interior_nodes
    return source.eval_f(t, x, u, z), source.eval_g(t, x, u, z), source.eval_h(t, x, u, z)


@dataclass(eq=False)
class TrajectoryField:
    grid: SpatialGrid
    a: CoefficientField
    source: Source
    u: np.ndarray  # (steps + 1, n)
    path: NoisePath
    meta: dict = field(default_factory=dict)
    _grad: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return self.path.dt

    @property
    def steps(self) -> int:
        return len(self.u) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def xi(self) -> np.ndarray:
        return self.u[0]

    def grad(self, k: int) -> np.ndarray:
        if k not in self._grad:
            self._grad[k] = self.grid.gradient(self.u[k])
        return self._grad[k]

    def full(self) -> np.ndarray:
        """Values on all lattice nodes (zero on the boundary)."""
        return self.grid.embed(self.u)

    def to_csv(self, path: str, every: int = 1) -> None:
        import csv

        x = self.grid.interior_nodes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k}" for k in range(self.grid.dim)] + ["u"])
            for k in range(0, self.steps + 1, every):
                for i in range(self.grid.n_interior):
                    w.writerow([repr(float(self.times[k]))] + [repr(float(v)) for v in x[i]]
                               + [repr(float(self.u[k, i]))])


def step_semi_implicit(u: np.ndarray, t: float, dt: float, grid: SpatialGrid, stepper: ImplicitStepper,
                       f: np.ndarray, g: np.ndarray, h: np.ndarray, dB: np.ndarray) -> np.ndarray:
    """One step from (t, u) with frozen data (f, g, h) and increments dB (..., K)."""
    rhs = u + dt * (f + grid.divergence(g))
    if h.shape[-1]:
        rhs = rhs + np.einsum("...nk,...k->...n", h, dB)
    return stepper.solve(t + dt, rhs)


def _march(grid: SpatialGrid, a: CoefficientField, xi: np.ndarray, dB: np.ndarray, dt: float,
           data: Callable[[int, float, np.ndarray], tuple]) -> np.ndarray:
    """Generic loop; dB has shape (steps, ..., K). Returns (steps + 1, ..., n)."""
    steps = dB.shape[0]
    batch = dB.shape[1:-1]
    u = np.broadcast_to(np.asarray(xi, dtype=float), batch + (grid.n_interior,)).copy()
    scale = max(1.0, float(np.abs(u).max(initial=0.0)))
    out = np.empty((steps + 1,) + u.shape)
    out[0] = u
    stepper = ImplicitStepper(a, grid, dt)
    for k in range(steps):
        t = k * dt
        f, g, h = data(k, t, u)
        u = step_semi_implicit(u, t, dt, grid, stepper, f, g, h, dB[k])
        top = float(np.abs(u).max(initial=0.0))
        if not math.isfinite(top) or top > BLOWUP_FACTOR * scale:
            raise BlowUpError(f"solution exceeded {BLOWUP_FACTOR:g} x data scale at t={t + dt:.4g}")
        out[k + 1] = u
    return out


def integrate(problem: Problem, xi: np.ndarray, path: NoisePath, source: Source | None = None,
              meta: dict | None = None) -> TrajectoryField:
    """Direct semi-implicit integration driven by one noise path."""
    src = problem.coeffs if source is None else source
    K = problem.n_modes
    if path.n_modes < K:
        raise ValueError(f"path has {path.n_modes} modes, coefficients need {K}")
    dB = path.increments[:, :K]
    u = _march(problem.grid, problem.a, xi, dB, path.dt,
               lambda k, t, v: data_along(src, problem.grid, t, k, v, K))
    return TrajectoryField(problem.grid, problem.a, src, u, path, dict(meta or {}))


def integrate_batch(problem: Problem, xi: np.ndarray, paths: Sequence[NoisePath],
                    source: Source | None = None) -> list[TrajectoryField]:
    """Integrate several paths together (one factorisation, batched solves)."""
    src = problem.coeffs if source is None else source
    K = problem.n_modes
    dt = paths[0].dt
    dB = np.stack([p.increments[:, :K] for p in paths], axis=1)  # (steps, B, K)
    u = _march(problem.grid, problem.a, xi, dB, dt,
               lambda k, t, v: data_along(src, problem.grid, t, k, v, K))
    return [TrajectoryField(problem.grid, problem.a, src, u[:, b], p) for b, p in enumerate(paths)]


def deterministic_path(problem: Problem, steps: int, dt: float) -> NoisePath:
    return zero_path(problem.n_modes, steps, dt)


# --------------------------------------------------------------------------- Picard


@dataclass(frozen=True)
class PicardParams:
    eps: float
    gamma: float
    delta: float
    bound: float  # contraction factor guaranteed by the weighted-norm estimate
    eps_default: bool = False


def picard_params(lam: float, C: float, alpha: float, beta: float) -> PicardParams:
    """Weights (gamma, delta) of the contraction norm and the resulting factor.

    epsilon is the midpoint of the feasible interval for
    C eps + alpha + beta^2 (1 + eps) < 2 lam - alpha.
    """
    if not alpha + 0.5 * beta**2 < lam:
        raise GateError(
            f"contraction condition alpha + beta^2/2 < lambda fails: "
            f"{alpha + 0.5 * beta**2:.6g} >= {lam:.6g}"
        )
    slack = 2 * lam - 2 * alpha - beta**2
    denom = C + beta**2
    eps_default = denom == 0
    eps = 1.0 if eps_default else 0.5 * slack / denom
    q = C * eps + alpha + beta**2 * (1 + eps)
    ell = 2 * lam - alpha
    if q > 0:
        gamma = 1 / eps + ell * C * (1 + eps + 2 / eps) / q
    else:
        gamma = 1 / eps + 1.0
    delta = (gamma - 1 / eps) / ell
    return PicardParams(eps, gamma, delta, q / ell, eps_default)


def weighted_sq_norm(grid: SpatialGrid, v: np.ndarray, dt: float, gamma: float, delta: float) -> float:
    """sum_k dt e^{-gamma t_k} (delta |v_k|^2 + |grad v_k|^2) over k = 1..steps."""
    hd = grid.cell_volume
    total = 0.0
    for k in range(1, len(v)):
        w = math.exp(-gamma * k * dt)
        total += dt * w * (delta * hd * float(v[k] @ v[k]) + gradient_sq(grid, v[k]))
    return total


def picard_map(problem: Problem, xi: np.ndarray, path: NoisePath, frozen: np.ndarray) -> np.ndarray:
    """Solve the linear problem whose data are (f, g, h) evaluated along ``frozen``."""
    K = problem.n_modes
    grid = problem.grid
    x = grid.interior_nodes
    co = problem.coeffs

    def data(k, t, _u):
        y = frozen[k]
        z = grid.gradient(y)
        return co.eval_f(t, x, y, z), co.eval_g(t, x, y, z), co.eval_h(t, x, y, z)

    dB = path.increments[..., :K] if path.increments.ndim == 2 else path.increments
    return _march(grid, problem.a, xi, dB, path.dt, data)


@dataclass
class PicardTrace:
    params: PicardParams
    distances: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.distances)

    @property
    def ratios(self) -> list:
        d = self.distances
        return [b / a for a, b in zip(d, d[1:]) if a > 0]


def picard_solve(problem: Problem, xi: np.ndarray, path: NoisePath, T: float | None = None,
                 tol: float = 1e-10, max_iter: int = 60, lam: float | None = None) -> tuple[TrajectoryField, PicardTrace]:
    """Fixed point of the Picard map started from u = xi at all times.

    Every iterate reuses ``path``. Stops when the weighted distance between
    successive iterates drops below ``tol``.
    """
    co = problem.coeffs
    lam = problem.a.lam if lam is None else lam
    params = picard_params(lam, co.C, co.alpha, co.beta)
    if T is not None:
        steps = int(round(T / path.dt))
        path = NoisePath(path.dt, path.increments[:steps], path.seed)
    xi = np.asarray(xi, dtype=float)
    u = np.broadcast_to(xi, (path.steps + 1, problem.grid.n_interior)).copy()
    trace = PicardTrace(params)
    rising = 0
    for _ in range(max_iter):
        new = picard_map(problem, xi, path, u)
        dist = weighted_sq_norm(problem.grid, new - u, path.dt, params.gamma, params.delta)
        if not math.isfinite(dist):
            raise ContractionError("non-finite Picard distance", trace)
        if trace.distances and dist >= trace.distances[-1]:
            rising += 1
        else:
            rising = 0
        trace.distances.append(dist)
        u = new
        if dist < tol:
            trace.converged = True
            break
        if rising >= 3:
            r = trace.ratios[-1] if trace.ratios else float("nan")
            raise ContractionError(f"Picard distances did not decrease for 3 iterates (ratio {r:.3g})", trace)
    traj = TrajectoryField(problem.grid, problem.a, co, u, path, {"picard_iterations": trace.iterations})
    return traj, trace


def contraction_ratio(problem: Problem, xi: np.ndarray, paths: Sequence[NoisePath], u: np.ndarray,
                      v: np.ndarray, params: PicardParams | None = None) -> float:
    """E|Lu - Lv|_{gamma,delta} / E|u - v|_{gamma,delta}, expectation over ``paths``."""
    co = problem.coeffs
    params = params or picard_params(problem.a.lam, co.C, co.alpha, co.beta)
    num = 0.0
    for p in paths:
        lu = picard_map(problem, xi, p, u)
        lv = picard_map(problem, xi, p, v)
        num += weighted_sq_norm(problem.grid, lu - lv, p.dt, params.gamma, params.delta)
    den = len(paths) * weighted_sq_norm(problem.grid, u - v, paths[0].dt, params.gamma, params.delta)
    return num / den


def power_contraction_factor(problem: Problem, xi: np.ndarray, path: NoisePath, u: np.ndarray,
                             v: np.ndarray, iters: int = 10) -> float:
    """Largest norm ratio |Lu - Lv| / |u - v| seen while iterating the pair under the map.

    The difference is rescaled to its initial size after each step, so the pair
    drifts towards the direction the map contracts least.
    """
    co = problem.coeffs
    params = picard_params(problem.a.lam, co.C, co.alpha, co.beta)

    def nrm(w):
        return math.sqrt(weighted_sq_norm(problem.grid, w, path.dt, params.gamma, params.delta))

    size = nrm(u - v)
    best = 0.0
    for _ in range(iters):
        lu = picard_map(problem, xi, path, u)
        lv = picard_map(problem, xi, path, v)
        d = nrm(lu - lv)
        best = max(best, d / nrm(u - v))
        if d == 0:
            break
        u, v = lu, lu + (lv - lu) * (size / d)
    return best


# --------------------------------------------------------------------------- identities


@dataclass(frozen=True)
class ItoResidualRecord:
    identity: str
    left: float
    right: float
    residual: float
    scale: float
    seed: int | None
    terms: dict

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else 0.0

    def row(self) -> list:
        return [self.identity, repr(self.left), repr(self.right), repr(self.residual), self.seed]


def _operators(traj: TrajectoryField):
    stepper = ImplicitStepper(traj.a, traj.grid, traj.dt)
    if traj.a.time_constant:
        op = stepper.operator(0.0)
        return lambda t: op
    return lambda t: assemble(traj.a, traj.grid, t)


def _frozen_series(traj: TrajectoryField):
    K = traj.source.n_modes if isinstance(traj.source, NonlinearCoefficients) else (
        0 if traj.source.w is None else traj.source.w.shape[-1])
    for k in range(traj.steps):
        yield k, data_along(traj.source, traj.grid, k * traj.dt, k, traj.u[k], K)


def energy_identity_residual(traj: TrajectoryField) -> ItoResidualRecord:
    """Discrete energy balance with the data frozen along the trajectory.

    left  = |u_T|^2 + 2 sum dt E(u_{k+1})
    right = |xi|^2 + 2 sum (w_k, u_k) dB_k + 2 sum dt (u_{k+1}, f_k)
            - 2 sum dt (grad u_{k+1}, g_k) + sum dt |w_k|^2
    """
    grid, dt, hd = traj.grid, traj.dt, traj.grid.cell_volume
    ops = _operators(traj)
    u = traj.u
    diss = src_f = src_g = mart = qv = 0.0
    for k, (f, g, h) in _frozen_series(traj):
        t1 = (k + 1) * dt
        diss += dt * float(ops(t1).energy(grid, u[k + 1]))
        src_f += dt * hd * float(u[k + 1] @ f)
        src_g -= dt * hd * float(np.sum(traj.grad(k + 1) * g))
        if h.shape[-1]:
            noise = h @ traj.path.increments[k, : h.shape[-1]]
            mart += hd * float(u[k] @ noise)
            qv += dt * hd * float(np.sum(h * h))
    end = hd * float(u[-1] @ u[-1])
    start = hd * float(u[0] @ u[0])
    left = end + 2 * diss
    right = start + 2 * mart + 2 * src_f + 2 * src_g + qv
    scale = start + qv + 2 * abs(src_f) + 2 * abs(src_g)
    terms = {"end": end, "dissipation": 2 * diss, "initial": start, "martingale": 2 * mart,
             "f": 2 * src_f, "g": 2 * src_g, "qv": qv}
    return ItoResidualRecord("energy", left, right, abs(left - right), scale, traj.path.seed, terms)


@dataclass(frozen=True)
class PhiFunction:
    """phi(t, y) with derivatives; ``dt_phi`` is the time derivative."""

    phi: Callable
    d1: Callable
    d2: Callable
    dt_phi: Callable | None = None
    name: str = "phi"

    def check(self) -> None:
        for t in (0.0, 0.5, 1.0):
            v = float(np.asarray(self.d1(t, np.zeros(1)))[0])
            if abs(v) > 1e-14:
                raise ValueError(f"phi'(t, 0) must vanish; got {v:g} at t={t}")


def square() -> PhiFunction:
    return PhiFunction(lambda t, y: y * y, lambda t, y: 2 * y, lambda t, y: 2 + 0 * y, None, "y^2")


def damped_square() -> PhiFunction:
    return PhiFunction(
        lambda t, y: np.exp(-t) * y * y,
        lambda t, y: 2 * np.exp(-t) * y,
        lambda t, y: 2 * np.exp(-t) + 0 * y,
        lambda t, y: -np.exp(-t) * y * y,
        "exp(-t) y^2",
    )


def saturated_square(c: float = 1.0) -> PhiFunction:
    """c y^2 / (1 + y^2), bounded second derivative."""
    return PhiFunction(
        lambda t, y: c * y * y / (1 + y * y),
        lambda t, y: 2 * c * y / (1 + y * y) ** 2,
        lambda t, y: 2 * c * (1 - 3 * y * y) / (1 + y * y) ** 3,
        None,
        f"{c}y^2/(1+y^2)",
    )


def _phi_balance(traj: TrajectoryField, phi: PhiFunction, positive: bool, label: str) -> ItoResidualRecord:
    phi.check()
    grid, dt, hd = traj.grid, traj.dt, traj.grid.cell_volume
    ops = _operators(traj)
    u = traj.u

    def arg(v):
        return np.maximum(v, 0.0) if positive else v

    def ind(v):
        return (v > 0).astype(float) if positive else np.ones_like(v)

    diss = tder = src_f = src_g = mart = qv = 0.0
    for k, (f, g, h) in _frozen_series(traj):
        t0, t1 = k * dt, (k + 1) * dt
        v1, v0 = arg(u[k + 1]), arg(u[k])
        p1 = phi.d1(t1, v1)
        diss += dt * float(ops(t1).energy(grid, u[k + 1], p1))
        if phi.dt_phi is not None:
            tder += dt * hd * float(np.sum(phi.dt_phi(t1, v1)))
        src_f += dt * hd * float(p1 @ f)
        w2 = phi.d2(t1, v1) * ind(u[k + 1])
        src_g -= dt * hd * float(np.sum(w2[:, None] * traj.grad(k + 1) * g))
        if h.shape[-1]:
            noise = h @ traj.path.increments[k, : h.shape[-1]]
            mart += hd * float(phi.d1(t0, v0) @ noise)
            qv += 0.5 * dt * hd * float((phi.d2(t0, v0) * ind(u[k])) @ np.sum(h * h, axis=1))
    end = hd * float(np.sum(phi.phi(traj.times[-1], arg(u[-1]))))
    start = hd * float(np.sum(phi.phi(0.0, arg(u[0]))))
    left = end + diss
    right = start + tder + src_f + src_g + mart + qv
    scale = abs(start) + abs(tder) + abs(src_f) + abs(src_g) + abs(qv)
    terms = {"end": end, "dissipation": diss, "initial": start, "time": tder, "martingale": mart,
             "f": src_f, "g": src_g, "qv": qv}
    return ItoResidualRecord(label, left, right, abs(left - right), scale, traj.path.seed, terms)


def ito_phi_residual(traj: TrajectoryField, phi: PhiFunction) -> ItoResidualRecord:
    """Discrete balance for sum h^d phi(t, u) (requires phi'(t, 0) = 0)."""
    return _phi_balance(traj, phi, False, "phi")


def positive_part_residual(traj: TrajectoryField, phi: PhiFunction) -> ItoResidualRecord:
    """Balance for phi(u^+), with grad u^+ = 1_{u>0} grad u and indicator-weighted
    quadratic variation."""
    v = np.asarray(phi.phi(0.0, np.zeros(1)))
    if abs(float(v[0])) > 1e-14:
        raise ValueError("phi(0) must vanish for the positive-part balance")
    return _phi_balance(traj, phi, True, "positive-part")


# --------------------------------------------------------------------------- ensembles


def map_chunks(fn: Callable[[list], list], items: Sequence, workers: int = 1, chunk: int = 8) -> list:
    """Apply ``fn`` to fixed-size chunks of ``items`` and concatenate in order.

    Chunk boundaries do not depend on ``workers``, so results are identical for
    any worker count.
    """
    chunks = [list(items[i : i + chunk]) for i in range(0, len(items), chunk)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return [r for p in parts for r in p]
