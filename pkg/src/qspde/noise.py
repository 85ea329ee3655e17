"""Spatially coloured noise: covariance spectra, Brownian increments, Ito processes.

Random streams are counter-based (Philox). Each (path seed, mode) pair owns an
independent stream, so a path is reproducible no matter which worker draws it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import Interval, Rectangle, SpatialGrid

NEG_EIG_TOL = 1e-10
KEEP_EIG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NoiseSpectrum:
    """Eigenpairs of the covariance operator restricted to interior nodes.

    ``modes[i]`` is the i-th eigenfunction sampled on interior nodes and is
    orthonormal for the discrete inner product h^d * sum over nodes.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    grid: SpatialGrid
    truncated: bool = False
    tail: float = 0.0
    name: str = "custom"

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    @property
    def sup_norms(self) -> np.ndarray:
        return np.abs(self.modes).max(axis=1)

    @property
    def trace_class_sum(self) -> float:
        return float(np.sum(self.eigenvalues * self.sup_norms**2))

    @property
    def scaled_modes(self) -> np.ndarray:
        """sqrt(lambda_i) e_i, shape (K, n)."""
        return np.sqrt(self.eigenvalues)[:, None] * self.modes

    def gram(self) -> np.ndarray:
        return self.grid.cell_volume * self.modes @ self.modes.T

    def kernel(self) -> np.ndarray:
        """Reconstructed k(x_a, x_b) on interior nodes."""
        return (self.modes.T * self.eigenvalues) @ self.modes

    def summary(self) -> dict:
        return {
            "name": self.name,
            "n_modes": self.n_modes,
            "trace": self.trace,
            "trace_class_sum": self.trace_class_sum,
            "truncated": self.truncated,
            "tail": self.tail,
        }


@dataclass(frozen=True)
class SineModes:
    """lambda_k = amp * k^-p with sine eigenfunctions of the bounding box."""

    p: float = 2.0
    amp: float = 1.0


@dataclass(frozen=True)
class RankOne:
    """k(x, y) = e(x) e(y) for a supplied function e."""

    func: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Tabulated:
    """Kernel given as a callable k(X, Y) on point arrays or as a node matrix."""

    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] | np.ndarray


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for row in v:
        big = np.flatnonzero(np.abs(row) > 1e-8 * np.abs(row).max())
        if big.size and row[big[0]] < 0:
            row *= -1.0
    return v


def _box_sine_modes(grid: SpatialGrid, p: float, amp: float, n_modes: int):
    lo, hi = grid.shape.lower, grid.shape.upper
    L = hi - lo
    x = grid.interior_nodes
    if grid.dim == 1:
        ks = np.arange(1, n_modes + 1)
        lam = amp * ks.astype(float) ** (-p)
        modes = np.sqrt(2.0 / L[0]) * np.sin(np.pi * ks[:, None] * (x[None, :, 0] - lo[0]) / L[0])
        tail_k = np.arange(n_modes + 1, 200 * n_modes + 1, dtype=float)
        tail = float(amp * np.sum(tail_k ** (-p)))
        return lam, modes, tail
    # 2D: tensor product, lambda_{kl} = amp (k l)^-p, sorted non-increasing
    kmax = n_modes
    pairs = [(k, l) for k in range(1, kmax + 1) for l in range(1, kmax + 1)]
    pairs.sort(key=lambda kl: (-(kl[0] * kl[1]) ** (-p), kl[0], kl[1]))
    keep = pairs[:n_modes]
    lam = np.array([amp * float(k * l) ** (-p) for k, l in keep])
    modes = np.array(
        [
            (2.0 / np.sqrt(L[0] * L[1]))
            * np.sin(np.pi * k * (x[:, 0] - lo[0]) / L[0])
            * np.sin(np.pi * l * (x[:, 1] - lo[1]) / L[1])
            for k, l in keep
        ]
    )
    dropped = sum(amp * float(k * l) ** (-p) for k, l in pairs[n_modes:])
    return lam, modes, float(dropped)


def _diagonalize(grid: SpatialGrid, K: np.ndarray, n_modes: int, name: str) -> NoiseSpectrum:
    K = np.asarray(K, dtype=float)
    scale = max(1.0, float(np.abs(K).max()))
    if np.abs(K - K.T).max() > 1e-12 * scale:
        raise ValueError("tabulated kernel is not symmetric")
    hd = grid.cell_volume
    vals, vecs = np.linalg.eigh(hd * 0.5 * (K + K.T))
    if vals.min() < -NEG_EIG_TOL:
        raise ValueError(f"kernel is indefinite: eigenvalue {vals.min():.3e}")
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    positive = vals > KEEP_EIG_TOL
    kept = min(n_modes, int(positive.sum()))
    if kept == 0:
        raise ValueError("kernel has no positive eigenvalues")
    lam = vals[:kept]
    modes = _canonical_sign(vecs[:, :kept].T.copy()) / np.sqrt(hd)
    tail = float(vals[kept:][vals[kept:] > 0].sum())
    return NoiseSpectrum(lam, modes, grid, truncated=tail > 0, tail=tail, name=name)


def build_spectrum(kernel, grid: SpatialGrid, n_modes: int) -> NoiseSpectrum:
    """Spectrum of a kernel descriptor on ``grid`` truncated to ``n_modes`` modes."""
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if isinstance(kernel, SineModes):
        if isinstance(grid.shape, (Interval, Rectangle)):
            lam, modes, tail = _box_sine_modes(grid, kernel.p, kernel.amp, n_modes)
            return NoiseSpectrum(lam, modes, grid, truncated=tail > 0, tail=tail,
                                 name=f"sine-modes({kernel.p:g})")
        # non-rectangular: tabulate the box kernel on the domain and re-diagonalise
        lam, modes, _ = _box_sine_modes(grid, kernel.p, kernel.amp, max(n_modes, 64))
        K = (modes.T * lam) @ modes
        return _diagonalize(grid, K, n_modes, f"sine-modes({kernel.p:g})")
    if isinstance(kernel, RankOne):
        e = np.asarray(kernel.func(grid.interior_nodes), dtype=float)
        return _diagonalize(grid, np.outer(e, e), n_modes, "rank-one")
    if isinstance(kernel, Tabulated):
        if callable(kernel.kernel):
            x = grid.interior_nodes
            K = kernel.kernel(x[:, None, :], x[None, :, :])
        else:
            K = np.asarray(kernel.kernel, dtype=float)
            if K.shape != (grid.n_interior, grid.n_interior):
                raise ValueError("tabulated kernel must be (interior nodes) x (interior nodes)")
        return _diagonalize(grid, K, n_modes, "tabulated")
    raise TypeError(f"unsupported kernel descriptor {kernel!r}")


def kernel_from_config(name: str, grid: SpatialGrid):
    name = name.strip()
    if name.startswith("sine-modes"):
        arg = name[len("sine-modes"):].strip("() ")
        return SineModes(float(arg) if arg else 2.0)
    if name == "rank-one":
        lo, hi = grid.shape.lower, grid.shape.upper
        L = hi - lo

        def first_mode(x):
            return np.prod(np.sqrt(2.0 / L) * np.sin(np.pi * (x - lo) / L), axis=1)

        return RankOne(first_mode)
    if name.startswith("tabulated:"):
        return Tabulated(np.loadtxt(name.split(":", 1)[1], delimiter=","))
    raise ValueError(f"unknown noise kernel preset {name!r}")


def path_seed(master: int, index: int, stream: int = 0) -> int:
    """Seed of path ``index`` in ensemble ``stream`` (0 calibration, 1 evaluation, ...)."""
    return int(np.random.SeedSequence([int(master), int(stream), int(index)]).generate_state(1, np.uint64)[0])


def mode_generator(seed: int, mode: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(mode)])))


@dataclass(frozen=True, eq=False)
class NoisePath:
    dt: float
    increments: np.ndarray  # (steps, K)
    seed: int | None = None

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def brownian(self) -> np.ndarray:
        out = np.zeros((self.steps + 1, self.n_modes))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def negated(self) -> "NoisePath":
        return NoisePath(self.dt, -self.increments, self.seed)


def sample_path(spectrum: NoiseSpectrum | int, steps: int, dt: float, seed: int) -> NoisePath:
    """Independent N(0, dt) increments per mode, one Philox stream per mode."""
    if steps < 1 or not dt > 0:
        raise ValueError("need steps >= 1 and dt > 0")
    K = spectrum if isinstance(spectrum, int) else spectrum.n_modes
    inc = np.empty((steps, K))
    sq = np.sqrt(dt)
    for i in range(K):
        inc[:, i] = sq * mode_generator(seed, i).standard_normal(steps)
    return NoisePath(float(dt), inc, int(seed))


def zero_path(n_modes: int, steps: int, dt: float) -> NoisePath:
    return NoisePath(float(dt), np.zeros((steps, max(n_modes, 0))), None)


@dataclass(frozen=True, eq=False)
class ItoProcessPath:
    m: float
    b: np.ndarray  # (steps,)
    sigma: np.ndarray  # (steps, K')
    values: np.ndarray  # (steps + 1,)
    dt: float


def _as_steps(spec, steps: int, dt: float, shape: tuple[int, ...]) -> np.ndarray:
    if callable(spec):
        arr = np.array([np.broadcast_to(spec(k * dt), shape) for k in range(steps)], dtype=float)
    else:
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == len(shape):
            arr = np.broadcast_to(arr, (steps,) + shape)
    return np.asarray(arr, dtype=float).reshape((steps,) + shape)


def sample_ito_process(m: float, b, sigma, path: NoisePath) -> ItoProcessPath:
    """M_k = m + sum_{j<k} (b_j dt + sum_i sigma_{i,j} dB^i_j), driven by ``path``.

    ``b`` is a scalar, a per-step array or a function of t; ``sigma`` is a
    per-mode vector, a (steps, K') array or a function of t returning a vector.
    """
    sig0 = np.asarray(sigma(0.0) if callable(sigma) else sigma, dtype=float)
    k_sig = sig0.shape[-1] if sig0.ndim else 1
    if k_sig > path.n_modes:
        raise ValueError(f"sigma uses {k_sig} modes but the path has {path.n_modes}")
    bs = _as_steps(b, path.steps, path.dt, ())
    ss = _as_steps(sigma, path.steps, path.dt, (k_sig,))
    incr = bs * path.dt + np.einsum("ki,ki->k", ss, path.increments[:, :k_sig])
    vals = np.empty(path.steps + 1)
    vals[0] = m
    vals[1:] = m + np.cumsum(incr)
    return ItoProcessPath(float(m), bs, ss, vals, path.dt)


def lipschitz_transfer_gap(spectrum: NoiseSpectrum, node: int, dh: float) -> tuple[float, float]:
    """(sum_i |h_i(y) - h_i(y')|^2, bound) for h_i = sqrt(lambda_i) htilde e_i at one node."""
    lhs = float(np.sum(spectrum.eigenvalues * spectrum.modes[:, node] ** 2) * dh**2)
    return lhs, spectrum.trace_class_sum * dh**2


__all__ = [
    "NoiseSpectrum", "SineModes", "RankOne", "Tabulated", "build_spectrum", "kernel_from_config",
    "NoisePath", "sample_path", "zero_path", "path_seed", "ItoProcessPath", "sample_ito_process",
    "lipschitz_transfer_gap",
]
