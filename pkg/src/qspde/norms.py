"""Mixed space-time Lebesgue norms, the sharp norm and computable dual-norm bounds.

Space integrals use the grid's dual-cell quadrature weights; time integrals use
the rectangle rule over the stored samples (each sample stands for one step of
length dt). Sup norms are maxima over samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import SpatialGrid

INF = math.inf


def sobolev_exponent(d: int) -> float:
    """2* for dimension d: infinity in 1D, 6 in 2D, 2d/(d-2) beyond."""
    if d == 1:
        return INF
    if d == 2:
        return 6.0
    return 2.0 * d / (d - 2.0)


def conjugate(p: float) -> float:
    if p == INF:
        return 1.0
    if p == 1:
        return INF
    return p / (p - 1.0)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Samples u(t_k, x) for k = 1..m on full lattice nodes.

    ``values`` has shape (m, N) or (m, N, c) for vector fields, in which case
    the pointwise Euclidean norm is used.
    """

    grid: SpatialGrid
    values: np.ndarray
    dt: float

    @classmethod
    def from_interior(cls, grid: SpatialGrid, values: np.ndarray, dt: float) -> "SpaceTimeField":
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[None]
        if v.ndim == 3:
            v = np.moveaxis(grid.embed(np.moveaxis(v, -1, 1)), 1, -1)
        else:
            v = grid.embed(v)
        return cls(grid, v, float(dt))

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def magnitude(self) -> np.ndarray:
        v = self.values
        return np.linalg.norm(v, axis=-1) if v.ndim == 3 else np.abs(v)


@dataclass(frozen=True)
class NormReport:
    norm: str
    value: float
    exponents: tuple | None = None


def space_norm(grid: SpatialGrid, w: np.ndarray, p: float) -> np.ndarray:
    """L^p(O) norm of full-node field(s); last axis is nodes."""
    w = np.abs(np.asarray(w, dtype=float))
    wts = grid.quad_weights
    if p == INF:
        return np.where(wts > 0, w, 0.0).max(axis=-1)
    return (np.sum(wts * w**p, axis=-1)) ** (1.0 / p)


def lpq_norm(u: SpaceTimeField, p: float, q: float) -> float:
    s = space_norm(u.grid, u.magnitude(), p)
    if q == INF:
        return float(s.max())
    return float((u.dt * np.sum(s**q)) ** (1.0 / q))


def sharp_norm(u: SpaceTimeField) -> float:
    ps = sobolev_exponent(u.grid.dim)
    return max(lpq_norm(u, 2, INF), lpq_norm(u, ps, 2))


def dual_sharp_pairs(d: int) -> list[tuple[float, float]]:
    ps = sobolev_exponent(d)
    return [(2.0, 1.0), (conjugate(ps), 2.0)]


def dual_sharp_upper(v: SpaceTimeField) -> float:
    """Upper bound of the dual sharp norm by one-term decompositions."""
    return min(lpq_norm(v, p, q) for p, q in dual_sharp_pairs(v.grid.dim))


def theta_corners(d: int, theta: float) -> list[tuple[float, float]]:
    """Corner exponent pairs of the theta-admissible set, dropping those with p < 1.

    In dimensions 1 and 2 the spatial exponent of the second corner is
    kappa/(1 - theta) with kappa = 2*/(2* - 2) (equal to 1 when 2* is infinite);
    for d >= 3 it is d/(2(1 - theta)).
    """
    if not 0 <= theta < 1:
        raise ValueError("theta must lie in [0, 1)")
    ps = sobolev_exponent(d)
    if d <= 2:
        kappa = 1.0 if ps == INF else ps / (ps - 2.0)
    else:
        kappa = d / 2.0
    corners = [(INF, 1.0 / (1.0 - theta)), (kappa / (1.0 - theta), INF)]
    return [(p, q) for p, q in corners if p >= 1]


def theta_dual_upper(v: SpaceTimeField, theta: float) -> float:
    return min(lpq_norm(v, p, q) for p, q in theta_corners(v.grid.dim, theta))


def _full(grid: SpatialGrid, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return grid.embed(w) if w.shape[-1] == grid.n_interior and grid.n_interior != grid.n_nodes else w


def gradient_sq(grid: SpatialGrid, w: np.ndarray) -> float:
    """||grad_h w||_2^2 with forward differences on lattice edges in the closed domain."""
    full = _full(grid, w)
    return float(sum(grid.cell_volume * np.sum((D @ full) ** 2) for D in grid.forward_diff))


def h1_norm(grid: SpatialGrid, w: np.ndarray) -> float:
    full = _full(grid, w)
    l2 = float(space_norm(grid, full, 2))
    return math.sqrt(l2**2 + gradient_sq(grid, full))


def sobolev_ratio(grid: SpatialGrid, w: np.ndarray) -> float:
    """||w||_{2*} / ||grad w||_2 for one field."""
    full = _full(grid, w)
    g = math.sqrt(gradient_sq(grid, full))
    return float(space_norm(grid, full, sobolev_exponent(grid.dim))) / g if g > 0 else 0.0


def fit_sobolev_constant(grid: SpatialGrid, fields) -> float:
    return max(sobolev_ratio(grid, w) for w in fields)


NORM_IDS = ("L2L2", "L2Linf", "sharp", "dual_sharp_upper", "theta_dual_upper", "H1")


def evaluate_norm(norm_id: str, u: SpaceTimeField) -> NormReport:
    """Named norm lookup used by scenario files, e.g. ``theta_dual_upper(0.5)``."""
    nid = norm_id.strip()
    if nid == "L2L2":
        return NormReport(nid, lpq_norm(u, 2, 2), (2, 2))
    if nid == "L2Linf":
        return NormReport(nid, lpq_norm(u, 2, INF), (2, INF))
    if nid == "sharp":
        return NormReport(nid, sharp_norm(u))
    if nid == "dual_sharp_upper":
        return NormReport(nid, dual_sharp_upper(u), tuple(dual_sharp_pairs(u.grid.dim)))
    if nid.startswith("theta_dual_upper"):
        arg = nid[len("theta_dual_upper"):].strip("() ")
        th = float(arg) if arg else 0.0
        return NormReport(nid, theta_dual_upper(u, th), tuple(theta_corners(u.grid.dim, th)))
    if nid == "H1":
        return NormReport(nid, h1_norm(u.grid, u.values[-1]))
    raise ValueError(f"unknown norm id {norm_id!r}")
