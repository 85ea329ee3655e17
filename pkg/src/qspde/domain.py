"""Bounded domains, uniform lattices, boundary distance and cutoff functions.

Fields on a grid come in two layouts. *Interior* vectors hold one value per
interior node (the unknowns of a Dirichlet problem). *Full* vectors hold one
value per lattice node of the bounding box; boundary and exterior entries are
zero for anything derived from an interior vector.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

_EPS = 1e-12


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


@dataclass(frozen=True)
class Interval:
    length: float = 1.0

    dim = 1
    kind = "interval"

    @property
    def lower(self) -> np.ndarray:
        return np.zeros(1)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.length])

    @property
    def diameter(self) -> float:
        return self.length

    @property
    def measure(self) -> float:
        return self.length

    def contains(self, pts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(pts)[:, 0]
        return (x > _EPS) & (x < self.length - _EPS)

    def in_closure(self, pts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(pts)[:, 0]
        return (x > -_EPS) & (x < self.length + _EPS)

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(pts)[:, 0]
        return np.where(self.in_closure(pts), np.minimum(x, self.length - x).clip(0.0), 0.0)

    def boundary_points(self, density: int) -> np.ndarray:
        return np.array([[0.0], [self.length]])

    def describe(self) -> dict:
        return {"type": "interval", "length": self.length}


@dataclass(frozen=True)
class Rectangle:
    lx: float = 1.0
    ly: float = 1.0

    dim = 2
    kind = "rectangle"

    @property
    def lower(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.lx, self.ly])

    @property
    def diameter(self) -> float:
        return math.hypot(self.lx, self.ly)

    @property
    def measure(self) -> float:
        return self.lx * self.ly

    def contains(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(pts)
        return ((p > _EPS) & (p < self.upper - _EPS)).all(axis=1)

    def in_closure(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(pts)
        return ((p > -_EPS) & (p < self.upper + _EPS)).all(axis=1)

    def segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        c = [(0.0, 0.0), (self.lx, 0.0), (self.lx, self.ly), (0.0, self.ly)]
        return [(np.array(c[i]), np.array(c[(i + 1) % 4])) for i in range(4)]

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(pts)
        d = np.minimum(p, self.upper - p).min(axis=1).clip(0.0)
        return np.where(self.in_closure(p), d, 0.0)

    def boundary_points(self, density: int) -> np.ndarray:
        return _sample_segments(self.segments(), density)

    def describe(self) -> dict:
        return {"type": "rectangle", "lx": self.lx, "ly": self.ly}


@dataclass(frozen=True)
class LShape:
    """The square (0, size)^2 with the corner block [notch, size)^2 removed."""

    size: float = 1.0
    notch: float = 0.5

    dim = 2
    kind = "lshape"

    def __post_init__(self) -> None:
        if not 0 < self.notch < self.size:
            raise ValueError("notch must lie strictly inside (0, size)")

    @property
    def lower(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.size, self.size])

    @property
    def diameter(self) -> float:
        return math.sqrt(2.0) * self.size

    @property
    def measure(self) -> float:
        return self.size**2 - (self.size - self.notch) ** 2

    def contains(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(pts)
        box = ((p > _EPS) & (p < self.size - _EPS)).all(axis=1)
        notch = (p > self.notch - _EPS).all(axis=1)
        return box & ~notch

    def in_closure(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(pts)
        box = ((p > -_EPS) & (p < self.size + _EPS)).all(axis=1)
        notch = (p > self.notch + _EPS).all(axis=1)
        return box & ~notch

    def segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        s, n = self.size, self.notch
        c = [(0.0, 0.0), (s, 0.0), (s, n), (n, n), (n, s), (0.0, s)]
        return [(np.array(c[i]), np.array(c[(i + 1) % 6])) for i in range(6)]

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(pts).astype(float)
        d = np.min([_segment_distance(p, a, b) for a, b in self.segments()], axis=0)
        return np.where(self.in_closure(p), d, 0.0)

    def boundary_points(self, density: int) -> np.ndarray:
        return _sample_segments(self.segments(), density)

    def describe(self) -> dict:
        return {"type": "lshape", "size": self.size, "notch": self.notch}


Shape = Interval | Rectangle | LShape


def _sample_segments(segs, density: int) -> np.ndarray:
    out = []
    for a, b in segs:
        t = np.linspace(0.0, 1.0, density + 1)[:, None]
        out.append(a + t * (b - a))
    return np.vstack(out)


def shape_from_config(cfg: dict) -> Shape:
    kind = cfg.get("type")
    if kind == "interval":
        return Interval(float(cfg.get("length", 1.0)))
    if kind == "rectangle":
        return Rectangle(float(cfg.get("lx", 1.0)), float(cfg.get("ly", 1.0)))
    if kind == "lshape":
        return LShape(float(cfg.get("size", 1.0)), float(cfg.get("notch", 0.5)))
    raise ValueError(f"unknown domain type {kind!r}")


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform lattice over the bounding box of a shape, with an interior mask.

    Nodes are ordered with the first axis slowest (``np.meshgrid(indexing="ij")``
    then ravel). ``rho`` is the exact distance from each interior node to the
    continuous boundary of ``shape``.
    """

    shape: Shape
    h: float
    counts: tuple[int, ...]
    nodes: np.ndarray
    interior_mask: np.ndarray
    rho_full: np.ndarray
    label: str = "base"

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask)

    @property
    def n_interior(self) -> int:
        return int(self.interior_index.size)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior_index]

    @property
    def rho(self) -> np.ndarray:
        return self.rho_full[self.interior_index]

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def lattice_index(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.counts)

    def embed(self, values: np.ndarray) -> np.ndarray:
        """Interior vector(s) -> full vector(s); last axis is the node axis."""
        v = np.asarray(values)
        out = np.zeros(v.shape[:-1] + (self.n_nodes,), dtype=v.dtype)
        out[..., self.interior_index] = v
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., self.interior_index]

    def evaluate(self, fn) -> np.ndarray:
        """Evaluate ``fn(points) -> values`` on interior nodes."""
        return np.asarray(fn(self.interior_nodes), dtype=float)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Per-node share of the domain measure (dual-cell quadrature)."""
        d = self.dim
        offsets = np.array(np.meshgrid(*[[-0.25, 0.25]] * d, indexing="ij")).reshape(d, -1).T
        w = np.zeros(self.n_nodes)
        for off in offsets:
            w += self.shape.contains(self.nodes + off * self.h)
        return w * self.cell_volume / len(offsets)

    @cached_property
    def _edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Lattice edges lying in the closed domain, per axis, as (tail, head)."""
        out = []
        grid_idx = np.arange(self.n_nodes).reshape(self.counts)
        for k in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[k] = slice(0, -1)
            hi[k] = slice(1, None)
            tail = grid_idx[tuple(lo)].ravel()
            head = grid_idx[tuple(hi)].ravel()
            mid = 0.5 * (self.nodes[tail] + self.nodes[head])
            keep = self.shape.in_closure(mid)
            out.append((tail[keep], head[keep]))
        return out

    @cached_property
    def forward_diff(self) -> list[sp.csr_matrix]:
        """Per-axis forward differences acting on full vectors (edges x nodes)."""
        mats = []
        for tail, head in self._edges:
            m = tail.size
            rows = np.concatenate([np.arange(m), np.arange(m)])
            cols = np.concatenate([head, tail])
            vals = np.concatenate([np.ones(m), -np.ones(m)]) / self.h
            mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n_nodes)))
        return mats

    @cached_property
    def forward_diff_interior(self) -> list[sp.csr_matrix]:
        return [D[:, self.interior_index].tocsr() for D in self.forward_diff]

    @cached_property
    def central_diff(self) -> list[sp.csr_matrix]:
        """Per-axis centred differences between interior vectors, zero extension."""
        pos = -np.ones(self.n_nodes, dtype=np.int64)
        pos[self.interior_index] = np.arange(self.n_interior)
        multi = np.array(np.unravel_index(self.interior_index, self.counts)).T
        mats = []
        for k in range(self.dim):
            rows, cols, vals = [], [], []
            for sign in (1, -1):
                nb = multi.copy()
                nb[:, k] += sign
                ok = (nb[:, k] >= 0) & (nb[:, k] < self.counts[k])
                flat = np.full(len(nb), -1, dtype=np.int64)
                flat[ok] = np.ravel_multi_index(tuple(nb[ok].T), self.counts)
                col = np.where(flat >= 0, pos[np.maximum(flat, 0)], -1)
                hit = col >= 0
                rows.append(np.flatnonzero(hit))
                cols.append(col[hit])
                vals.append(np.full(hit.sum(), sign / (2.0 * self.h)))
            mats.append(
                sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(self.n_interior, self.n_interior),
                )
            )
        return mats

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Centred gradient of interior vector(s): (..., n) -> (..., n, d)."""
        u = np.asarray(u)
        flat = u.reshape(-1, u.shape[-1]).T
        parts = [(D @ flat).T.reshape(u.shape) for D in self.central_diff]
        return np.stack(parts, axis=-1)

    def divergence(self, g: np.ndarray) -> np.ndarray:
        """Discrete divergence, the negative adjoint of :meth:`gradient`."""
        g = np.asarray(g)
        out = np.zeros(g.shape[:-1])
        for k, D in enumerate(self.central_diff):
            comp = g[..., k]
            flat = comp.reshape(-1, comp.shape[-1]).T
            out -= (D.T @ flat).T.reshape(comp.shape)
        return out

    def with_mask(self, mask: np.ndarray, label: str) -> "SpatialGrid":
        return SpatialGrid(self.shape, self.h, self.counts, self.nodes, mask, self.rho_full, label)


def make_grid(shape: Shape, h: float) -> SpatialGrid:
    """Build the uniform lattice of spacing ``h`` over ``shape``.

    Raises ``ValueError`` when ``h`` does not divide the shape's edges or when
    an axis carries fewer than three lattice nodes.
    """
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    lengths = shape.upper - shape.lower
    breaks = list(lengths)
    if isinstance(shape, LShape):
        breaks.append(shape.notch)
    for L in breaks:
        r = L / h
        if abs(r - round(r)) > 1e-9:
            raise ValueError(f"spacing {h} does not divide length {L}")
    counts = tuple(int(round(L / h)) + 1 for L in lengths)
    if min(counts) < 3:
        raise ValueError(f"degenerate grid: {counts} nodes per axis, need at least 3")
    axes = [shape.lower[k] + h * np.arange(counts[k]) for k in range(shape.dim)]
    nodes = np.array(np.meshgrid(*axes, indexing="ij")).reshape(shape.dim, -1).T

    mask = shape.contains(nodes)
    for k in range(shape.dim):
        for sign in (1, -1):
            shifted = nodes.copy()
            shifted[:, k] += sign * h
            mask &= shape.in_closure(shifted)
    if not mask.any():
        raise ValueError("grid has no interior nodes; refine h")
    rho = shape.boundary_distance(nodes)
    rho = np.where(shape.in_closure(nodes), rho, 0.0)
    return SpatialGrid(shape, float(h), counts, nodes, mask, rho)


def brute_force_distance(shape: Shape, pts: np.ndarray, density: int = 20000) -> np.ndarray:
    """Distance to a dense sampling of the boundary; an independent check of rho."""
    bnd = shape.boundary_points(density)
    p = np.atleast_2d(pts)
    out = np.empty(len(p))
    for i in range(0, len(p), 256):
        chunk = p[i : i + 256]
        out[i : i + 256] = np.sqrt(((chunk[:, None, :] - bnd[None]) ** 2).sum(-1)).min(axis=1)
    return out


def smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass(frozen=True, eq=False)
class CutoffField:
    n: int
    values: np.ndarray  # full-node layout
    grad_bound: float
    clamped: bool = False

    @property
    def effective_n(self) -> int:
        return self.n


def build_cutoff(grid: SpatialGrid, n: int) -> CutoffField:
    """Cutoff equal to 1 where rho >= 1/n, 0 where rho <= 1/(2n), smooth between.

    The ramp is the cubic smoothstep of ``2n(rho - 1/(2n))``; its slope in rho
    is at most 3n and rho is 1-Lipschitz, so discrete differences stay below 3n.
    If the band is thinner than one cell, ``n`` is clamped to ``floor(1/(2h))``.
    """
    if n <= 0:
        raise ValueError("cutoff index must be positive")
    clamped = False
    n_eff = n
    if 1.0 / (2 * n) < grid.h - 1e-15:
        n_eff = max(1, int(math.floor(1.0 / (2 * grid.h))))
        clamped = True
        warnings.warn(f"cutoff n={n} not resolved at h={grid.h}; clamped to {n_eff}", stacklevel=2)
    s = (grid.rho_full - 1.0 / (2 * n_eff)) * 2 * n_eff
    vals = smoothstep(s)
    vals[~grid.shape.in_closure(grid.nodes)] = 0.0
    grad = max((np.abs(D @ vals).max(initial=0.0) for D in grid.forward_diff), default=0.0)
    return CutoffField(n_eff, vals, float(grad), clamped)


@dataclass(frozen=True)
class CutoffReport:
    levels: list[int]
    errors: list[float]
    ratios: list[float]

    @property
    def sup_ratio(self) -> float:
        return max(self.ratios, default=0.0)

    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))


def cutoff_convergence_test(grid: SpatialGrid, w: np.ndarray, levels: Sequence[int]) -> CutoffReport:
    """H1 distance between phi_n * w and w for each n, plus the norm ratio."""
    from .norms import h1_norm

    w = np.asarray(w, dtype=float)
    full = grid.embed(w) if w.shape[-1] == grid.n_interior else w
    base = h1_norm(grid, full)
    errors, ratios = [], []
    for n in levels:
        phi = build_cutoff(grid, n).values
        errors.append(h1_norm(grid, phi * full - full))
        ratios.append(h1_norm(grid, phi * full) / base if base > 0 else 0.0)
    return CutoffReport(list(levels), errors, ratios)


@dataclass(frozen=True, eq=False)
class DomainSequence:
    base: SpatialGrid
    levels: list[SpatialGrid] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.levels)

    def is_nested(self) -> bool:
        return all(
            not (a.interior_mask & ~b.interior_mask).any() for a, b in zip(self.levels, self.levels[1:])
        )


def restrict_grid(grid: SpatialGrid, r: float, label: str | None = None) -> SpatialGrid:
    """Sub-grid of interior nodes with rho >= r (a discrete inner domain)."""
    mask = grid.interior_mask & (grid.rho_full >= r - 1e-12)
    if not mask.any():
        raise ValueError(f"level with rho >= {r:g} is empty; refine h")
    return grid.with_mask(mask, label or f"rho>={r:g}")


def approx_domains(shape: Shape, h: float, depth: int) -> DomainSequence:
    """Nested inner domains: level k keeps interior nodes with rho >= 1/(k+1)."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    base = make_grid(shape, h)
    levels, thr = [], []
    for k in range(1, depth + 1):
        r = 1.0 / (k + 1)
        levels.append(restrict_grid(base, r, f"level{k}"))
        thr.append(r)
    return DomainSequence(base, levels, thr)
