"""Divergence-form coefficient fields and their Dirichlet discretisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .domain import SpatialGrid

Evaluator = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Symmetric matrix field a(t, x) with declared ellipticity constants.

    ``func(t, x)`` takes points of shape (n, d) and returns (n, d, d).
    """

    func: Evaluator
    dim: int
    lam: float
    Lam: float
    M: float
    time_constant: bool = False
    name: str = "custom"

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.func(float(t), x), dtype=float)

    def __add__(self, other: "CoefficientField") -> "CoefficientField":
        return CoefficientField(
            lambda t, x: self(t, x) + other(t, x),
            self.dim,
            self.lam + other.lam,
            self.Lam + other.Lam,
            self.M + other.M,
            self.time_constant and other.time_constant,
            f"{self.name}+{other.name}",
        )

    def scaled(self, s: float) -> "CoefficientField":
        return CoefficientField(
            lambda t, x: s * self(t, x), self.dim, s * self.lam, s * self.Lam, s * self.M,
            self.time_constant, f"{s}*{self.name}",
        )


def constant(matrix, lam: float | None = None, Lam: float | None = None, M: float | None = None,
             name: str = "constant") -> CoefficientField:
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = A.shape[0]
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return CoefficientField(
        lambda t, x: np.broadcast_to(A, (len(x), d, d)).copy(),
        d,
        float(ev.min()) if lam is None else lam,
        float(ev.max()) if Lam is None else Lam,
        float(np.abs(A).max()) if M is None else M,
        True,
        name,
    )


def identity(dim: int, scale: float = 1.0) -> CoefficientField:
    return constant(scale * np.eye(dim), name="identity")


def scalar_sine(dim: int) -> CoefficientField:
    """(1.5 + 0.5 sin(2 pi x1) cos(2 pi t)) I, ellipticity between 1 and 2."""
    eye = np.eye(dim)

    def func(t, x):
        s = 1.5 + 0.5 * np.sin(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * t)
        return s[:, None, None] * eye

    return CoefficientField(func, dim, 1.0, 2.0, 2.0, False, "scalar-sine")


def step(dim: int, lo: float = 1.0, hi: float = 2.0, at: float = 0.5) -> CoefficientField:
    """lo I for x1 < at, hi I for x1 >= at."""
    eye = np.eye(dim)

    def func(t, x):
        s = np.where(x[:, 0] < at, lo, hi)
        return s[:, None, None] * eye

    return CoefficientField(func, dim, min(lo, hi), max(lo, hi), max(lo, hi), True, "step")


def anisotropic(diag=(1.0, 2.0)) -> CoefficientField:
    return constant(np.diag(diag), name="anisotropic")


def tabulated(path: str, dim: int, lam: float, Lam: float, M: float) -> CoefficientField:
    """Time-constant field read from CSV.

    1D: columns ``x, a``. 2D: columns ``x, y, a11, a12, a22`` on a full tensor
    lattice. Values are interpolated linearly between table nodes.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    data = np.array(rows, dtype=float)
    if dim == 1:
        xs, vals = data[:, 0], data[:, 1]
        order = np.argsort(xs)
        xs, vals = xs[order], vals[order]

        def func(t, x):
            return np.interp(x[:, 0], xs, vals)[:, None, None]

    elif dim == 2:
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        if len(xs) * len(ys) != len(data):
            raise ValueError("2D coefficient table must cover a full tensor lattice")
        order = np.lexsort((data[:, 1], data[:, 0]))
        table = data[order][:, 2:5].reshape(len(xs), len(ys), 3)
        interp = RegularGridInterpolator((xs, ys), table, bounds_error=False, fill_value=None)

        def func(t, x):
            v = interp(x)
            out = np.empty((len(x), 2, 2))
            out[:, 0, 0] = v[:, 0]
            out[:, 0, 1] = out[:, 1, 0] = v[:, 1]
            out[:, 1, 1] = v[:, 2]
            return out

    else:
        raise ValueError("tabulated coefficients support dim 1 or 2")
    return CoefficientField(func, dim, lam, Lam, M, True, f"tabulated:{path}")


def coefficient_from_config(cfg: dict, dim: int) -> CoefficientField:
    preset = cfg.get("preset", "identity")
    if preset == "identity":
        c = identity(dim, float(cfg.get("scale", 1.0)))
    elif preset == "scalar-sine":
        c = scalar_sine(dim)
    elif preset == "step":
        c = step(dim)
    elif preset == "anisotropic":
        if dim != 2:
            raise ValueError("anisotropic preset needs a 2D domain")
        c = anisotropic(tuple(cfg.get("diag", (1.0, 2.0))))
    elif preset.startswith("tabulated:"):
        c = tabulated(preset.split(":", 1)[1], dim, cfg["lam"], cfg["Lam"], cfg["M"])
    else:
        raise ValueError(f"unknown coefficient preset {preset!r}")
    lam = float(cfg.get("lam", c.lam))
    Lam = float(cfg.get("Lam", c.Lam))
    M = float(cfg.get("M", c.M))
    tc = bool(cfg.get("time_constant", c.time_constant))
    return CoefficientField(c.func, dim, lam, Lam, M, tc, c.name)


@dataclass(frozen=True)
class EllipticityReport:
    passed: bool
    lam_margin: float
    Lam_margin: float
    M_margin: float
    symmetric: bool
    witness: dict = field(default_factory=dict)


def validate_ellipticity(
    c: CoefficientField,
    samples: int,
    seed: int,
    box: tuple[np.ndarray, np.ndarray] | None = None,
    horizon: float = 1.0,
) -> EllipticityReport:
    """Sample (t, x) and check symmetry and the three declared bounds.

    The worst probe direction at each sample is an eigenvector of a(t, x), so
    the report witness gives the direction where the lower bound fails.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = (np.zeros(c.dim), np.ones(c.dim)) if box is None else box
    ts = rng.uniform(0.0, horizon, samples)
    xs = lo + (np.asarray(hi) - lo) * rng.random((samples, c.dim))
    worst = {"lam": np.inf, "Lam": np.inf, "M": np.inf}
    witness: dict = {}
    for t, x in zip(ts, xs):
        a = c(t, x[None])[0]
        asym = np.abs(a - a.T).max()
        if asym > 0:
            return EllipticityReport(False, np.nan, np.nan, np.nan, False,
                                     {"t": float(t), "x": x.tolist(), "asymmetry": float(asym)})
        ev, vec = np.linalg.eigh(a)
        m_lo = ev[0] - c.lam
        m_hi = c.Lam - ev[-1]
        m_M = c.M - np.abs(a).max()
        if m_lo < worst["lam"]:
            worst["lam"] = m_lo
            if m_lo < -1e-12:
                witness = {"t": float(t), "x": x.tolist(), "xi": vec[:, 0].tolist(), "bound": "lam"}
        if m_hi < worst["Lam"]:
            worst["Lam"] = m_hi
            if m_hi < -1e-12 and not witness:
                witness = {"t": float(t), "x": x.tolist(), "xi": vec[:, -1].tolist(), "bound": "Lam"}
        if m_M < worst["M"]:
            worst["M"] = m_M
            if m_M < -1e-12 and not witness:
                witness = {"t": float(t), "x": x.tolist(), "bound": "M"}
    ok = min(worst.values()) >= -1e-12
    return EllipticityReport(ok, worst["lam"], worst["Lam"], worst["M"], True, witness)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    t: float
    matrix: sp.csr_matrix

    def energy(self, grid: SpatialGrid, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
        """h^d v^T (-A) u; batched over leading axes."""
        v = u if v is None else v
        Au = np.asarray((self.matrix @ np.atleast_2d(u).T).T).reshape(np.shape(u))
        return -grid.cell_volume * np.sum(v * Au, axis=-1)


def _cells(grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Lower-corner multi-indices of cells with at least one interior corner, and
    the (cells, 2^d) array of flattened corner indices."""
    d = grid.dim
    corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
    lower = np.array(np.meshgrid(*[np.arange(n - 1) for n in grid.counts], indexing="ij")).reshape(d, -1).T
    flat = np.stack([np.ravel_multi_index(tuple((lower + c).T), grid.counts) for c in corners], axis=1)
    keep = grid.interior_mask[flat].any(axis=1)
    return flat[keep], corners


def _cell_coefficients(c: CoefficientField, grid: SpatialGrid, t: float, flat: np.ndarray) -> np.ndarray:
    nodes_used = np.unique(flat)
    vals = np.zeros((grid.n_nodes, grid.dim, grid.dim))
    vals[nodes_used] = c(t, grid.nodes[nodes_used])
    return vals[flat].mean(axis=1)


def assemble(c: CoefficientField, grid: SpatialGrid, t: float = 0.0) -> DiscreteOperator:
    """Assemble A_t on interior nodes from a cell-wise quadratic form.

    Each lattice cell carries the arithmetic mean of a over its corners. The
    cell energy weights edge differences by the diagonal entries (half per
    parallel edge) and couples cell-averaged gradient components through the
    off-diagonal entry. For a = I this is the standard (2d+1)-point Laplacian.
    """
    flat, corners = _cells(grid)
    acell = _cell_coefficients(c, grid, t, flat)
    pos = -np.ones(grid.n_nodes, dtype=np.int64)
    pos[grid.interior_index] = np.arange(grid.n_interior)
    n = grid.n_interior
    m = len(flat)
    d = grid.dim
    h = grid.h
    cell_rows = np.arange(m)

    def diff(head: np.ndarray, tail: np.ndarray) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for idx, sgn in ((head, 1.0), (tail, -1.0)):
            p = pos[idx]
            ok = p >= 0
            rows.append(cell_rows[ok])
            cols.append(p[ok])
            vals.append(np.full(ok.sum(), sgn / h))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n)
        )

    corner_id = {tuple(cc): j for j, cc in enumerate(corners)}
    # edge differences per axis, one per parallel edge of the cell
    edge_diffs: list[list[sp.csr_matrix]] = []
    for k in range(d):
        diffs = []
        for j, cc in enumerate(corners):
            if cc[k] == 0:
                up = cc.copy()
                up[k] = 1
                diffs.append(diff(flat[:, corner_id[tuple(up)]], flat[:, j]))
        edge_diffs.append(diffs)

    n_par = 2 ** (d - 1)
    K = sp.csr_matrix((n, n))
    for k in range(d):
        wk = sp.diags(acell[:, k, k] / n_par)
        for D in edge_diffs[k]:
            K = K + D.T @ wk @ D
    if d > 1:
        avg = [sum(edge_diffs[k]) / n_par for k in range(d)]
        for i in range(d):
            for j in range(d):
                if i != j:
                    K = K + avg[i].T @ sp.diags(acell[:, i, j]) @ avg[j]
    K = 0.5 * (K + K.T)
    return DiscreteOperator(float(t), (-K).tocsr())


def dirichlet_form(grid: SpatialGrid, op: DiscreteOperator, u: np.ndarray) -> float:
    return float(op.energy(grid, u))


def discrete_gradient_sq(grid: SpatialGrid, u: np.ndarray) -> float:
    """sum over edges of h^d |forward difference|^2 for an interior vector."""
    return float(sum(grid.cell_volume * np.sum((D @ u) ** 2) for D in grid.forward_diff_interior))


def mollify(c: CoefficientField, n: int, order: int = 8) -> CoefficientField:
    """Spatial convolution with a normalised bump of radius 1/n.

    Uses an even-order tensor Gauss-Legendre rule on the support, so the
    quadrature nodes are symmetric about the evaluation point.
    """
    if n < 1:
        raise ValueError("mollifier index must be >= 1")
    if order % 2:
        raise ValueError("quadrature order must be even")
    r = 1.0 / n
    z, w = np.polynomial.legendre.leggauss(order)
    d = c.dim
    grids = np.meshgrid(*[z] * d, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.meshgrid(*[w] * d, indexing="ij"), axis=0).ravel()
    rr = (pts**2).sum(axis=1)
    bump = np.where(rr < 1, np.exp(-1.0 / np.maximum(1 - rr, 1e-300)), 0.0)
    kern = wts * bump
    kern = kern / kern.sum()
    offsets = r * pts[kern > 0]
    kern = kern[kern > 0]

    def func(t, x):
        acc = np.zeros((len(x), d, d))
        for off, wt in zip(offsets, kern):
            acc += wt * c(t, x + off)
        return acc

    return CoefficientField(func, d, c.lam, c.Lam, c.M, c.time_constant, f"{c.name}*bump(1/{n})")


class ImplicitStepper:
    """Solves (I - dt * theta * A_{t+dt}) v = rhs with factorisation caching.

    ``theta = 1`` is implicit Euler; ``theta = 0.5`` gives Crank-Nicolson when the
    caller adds ``(1 - theta) * dt * A_t u`` to the right-hand side (see
    :meth:`explicit_part`). The factorisation is reused across steps when the
    coefficient field is declared time-constant.
    """

    def __init__(self, c: CoefficientField, grid: SpatialGrid, dt: float, theta: float = 1.0):
        self.c = c
        self.grid = grid
        self.dt = float(dt)
        self.theta = float(theta)
        self._cache: dict[float, tuple[DiscreteOperator, object]] = {}
        self.assemblies = 0

    def operator(self, t: float) -> DiscreteOperator:
        key = 0.0 if self.c.time_constant else float(t)
        if key not in self._cache:
            self._factor(key)
        return self._cache[key][0]

    def _factor(self, key: float):
        from scipy.sparse.linalg import splu

        op = assemble(self.c, self.grid, key)
        self.assemblies += 1
        n = self.grid.n_interior
        mat = (sp.identity(n, format="csc") - self.dt * self.theta * op.matrix).tocsc()
        lu = splu(mat)
        if not self.c.time_constant:
            self._cache.clear()
        self._cache[key] = (op, lu)

    def solve(self, t_next: float, rhs: np.ndarray) -> np.ndarray:
        """Solve for the state at ``t_next``; ``rhs`` is (n,) or (batch, n)."""
        key = 0.0 if self.c.time_constant else float(t_next)
        if key not in self._cache:
            self._factor(key)
        lu = self._cache[key][1]
        r = np.asarray(rhs, dtype=float)
        if r.ndim == 1:
            out = lu.solve(r)
        else:
            out = lu.solve(np.ascontiguousarray(r.T)).T
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"linear solve produced non-finite values at t={t_next}")
        return out

    def explicit_part(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.theta == 1.0:
            return np.zeros_like(u)
        A = self.operator(t).matrix
        u = np.asarray(u)
        Au = (A @ np.atleast_2d(u).T).T.reshape(u.shape)
        return (1.0 - self.theta) * self.dt * Au


def assemble_periodic_1d(c: CoefficientField, n_cells: int, t: float = 0.0) -> sp.csr_matrix:
    """Periodic 1D version of :func:`assemble` on [0, 1) with ``n_cells`` nodes."""
    h = 1.0 / n_cells
    x = h * np.arange(n_cells)
    a_nodes = c(t, x[:, None])[:, 0, 0]
    a_cell = 0.5 * (a_nodes + np.roll(a_nodes, -1))
    idx = np.arange(n_cells)
    D = sp.csr_matrix(
        (np.concatenate([np.ones(n_cells), -np.ones(n_cells)]) / h,
         (np.concatenate([idx, idx]), np.concatenate([(idx + 1) % n_cells, idx]))),
        shape=(n_cells, n_cells),
    )
    return (-(D.T @ sp.diags(a_cell) @ D)).tocsr()
