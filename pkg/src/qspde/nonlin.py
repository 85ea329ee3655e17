"""Nonlinear coefficients f, g, h and sampling audits of their structure constants.

Every callable takes ``(t, x, y, z)`` with ``x`` of shape (n, d), ``y`` of
shape (..., n) and ``z`` of shape (..., n, d), and returns

* f: (..., n)
* g: (..., n, d)
* h: (..., n, K)

Leading axes are batch axes (ensemble members).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import SpatialGrid
from .noise import NoiseSpectrum

Coef = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _zero_f(t, x, y, z):
    return np.zeros(np.shape(y))


def _zero_g(t, x, y, z):
    return np.zeros(np.shape(z))


@dataclass(frozen=True, eq=False)
class NonlinearCoefficients:
    f: Coef
    g: Coef
    h: Coef
    n_modes: int
    C: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    linear: bool = False  # True when f, g, h do not depend on (y, z)
    odd: bool = False  # True when (f, g, h)(-y, -z) = -(f, g, h)(y, z) for zero sources
    name: str = "custom"
    parts: dict = field(default_factory=dict)

    def eval_f(self, t, x, y, z) -> np.ndarray:
        return np.broadcast_to(self.f(t, x, y, z), np.shape(y))

    def eval_g(self, t, x, y, z) -> np.ndarray:
        return np.broadcast_to(self.g(t, x, y, z), np.shape(z))

    def eval_h(self, t, x, y, z) -> np.ndarray:
        return np.broadcast_to(self.h(t, x, y, z), np.shape(y) + (self.n_modes,))

    def with_constants(self, C: float, alpha: float, beta: float) -> "NonlinearCoefficients":
        return NonlinearCoefficients(self.f, self.g, self.h, self.n_modes, C, alpha, beta,
                                     self.linear, self.odd, self.name, self.parts)

    def shifted_f(self, df: Coef, name: str = "") -> "NonlinearCoefficients":
        """Same g, h with f replaced by f + df."""
        base = self.f

        def f(t, x, y, z):
            return base(t, x, y, z) + df(t, x, y, z)

        return NonlinearCoefficients(f, self.g, self.h, self.n_modes, self.C, self.alpha, self.beta,
                                     self.linear, False, name or self.name + "+df", self.parts)

    def scaled_sources(self, s: float) -> "NonlinearCoefficients":
        """Multiply the (y, z)-independent parts by s; only meaningful for linear sets."""
        if not self.linear:
            raise ValueError("source scaling is defined for linear coefficient sets only")
        f, g, h = self.f, self.g, self.h
        return NonlinearCoefficients(
            lambda t, x, y, z: s * np.asarray(f(t, x, y, z)),
            lambda t, x, y, z: s * np.asarray(g(t, x, y, z)),
            lambda t, x, y, z: s * np.asarray(h(t, x, y, z)),
            self.n_modes, self.C, self.alpha, self.beta, True, self.odd, f"{s}*{self.name}", self.parts,
        )

    def negated(self) -> "NonlinearCoefficients":
        """(y, z) -> -F(-y, -z) for each coefficient; the data of -u."""
        f, g, h = self.f, self.g, self.h
        return NonlinearCoefficients(
            lambda t, x, y, z: -np.asarray(f(t, x, -y, -z)),
            lambda t, x, y, z: -np.asarray(g(t, x, -y, -z)),
            lambda t, x, y, z: -np.asarray(h(t, x, -y, -z)),
            self.n_modes, self.C, self.alpha, self.beta, self.linear, self.odd, f"-{self.name}", self.parts,
        )


# --------------------------------------------------------------------------- presets


def _source_array(src, grid: SpatialGrid, shape: tuple[int, ...] = ()) -> np.ndarray:
    """Constant, callable of points or node array -> (n, *shape) array."""
    if src is None:
        return np.zeros((grid.n_interior,) + shape)
    if callable(src):
        return np.asarray(src(grid.interior_nodes), dtype=float).reshape((grid.n_interior,) + shape)
    arr = np.asarray(src, dtype=float)
    return np.broadcast_to(arr, (grid.n_interior,) + shape).copy()


def build_coefficients(
    grid: SpatialGrid,
    spectrum: NoiseSpectrum | None,
    f: str = "zero",
    g: str = "zero",
    h: str = "zero",
    f0=None,
    g0=None,
    h0=None,
    C: float | None = None,
    alpha: float | None = None,
    beta: float | None = None,
) -> NonlinearCoefficients:
    """Assemble coefficients from named parts plus (y, z)-independent sources.

    f parts: ``zero``, ``linear-reaction(c)``, ``sine-reaction(a)``.
    g parts: ``zero``, ``gradient-flux(a)`` (a * tanh(z) componentwise).
    h parts: ``zero``, ``multiplicative-noise(b)`` (sqrt(lam_i) b y e_i),
    ``gradient-noise(b)`` (sqrt(lam_i) e_i tanh(z_1) scaled so that beta = b).
    Sources: f0 scalar/field, g0 vector/field, h0 either ``("additive", s)`` for
    s sqrt(lam_i) e_i, ``("mode-constant", [s_1, ...])`` or an (n, K) array.
    Undeclared constants default to the exact Lipschitz constants of the parts.
    """
    K = spectrum.n_modes if spectrum is not None else 0
    d = grid.dim
    fa = _source_array(f0, grid)
    ga = _source_array(g0, grid, (d,))
    ha = _h_source(h0, grid, spectrum, K)

    kind, arg = _parse_preset(f)
    if kind == "zero":
        react, C_f = (lambda y: 0.0 * y), 0.0
    elif kind == "linear-reaction":
        c = 1.0 if arg is None else arg
        react, C_f = (lambda y: c * y), abs(c)
    elif kind == "sine-reaction":
        a = 1.0 if arg is None else arg
        react, C_f = (lambda y: a * np.sin(y)), abs(a)
    else:
        raise ValueError(f"unknown f preset {f!r}")

    kind, arg = _parse_preset(g)
    if kind == "zero":
        flux, a_g = None, 0.0
    elif kind == "gradient-flux":
        a_g = 0.5 if arg is None else arg
        flux = lambda z: a_g * np.tanh(z)  # noqa: E731
    else:
        raise ValueError(f"unknown g preset {g!r}")

    kind, arg = _parse_preset(h)
    grad_mult = None
    beta_h = 0.0
    if kind == "zero":
        mult, C_h = None, 0.0
    elif kind == "multiplicative-noise":
        if spectrum is None:
            raise ValueError("multiplicative noise needs a spectrum")
        b = 0.1 if arg is None else arg
        mult = b * spectrum.scaled_modes.T  # (n, K)
        C_h = abs(b) * np.sqrt(spectrum.trace_class_sum)
        beta_h = 0.0
    elif kind == "gradient-noise":
        if spectrum is None:
            raise ValueError("gradient noise needs a spectrum")
        b = 0.5 if arg is None else arg
        modes = spectrum.scaled_modes.T  # (n, K)
        peak = float(np.sqrt(np.max(np.sum(modes**2, axis=1))))
        mult, C_h, beta_h = None, 0.0, abs(b)
        grad_mult = b * modes / peak
    else:
        raise ValueError(f"unknown h preset {h!r}")

    def f_fn(t, x, y, z):
        return fa + react(y)

    def g_fn(t, x, y, z):
        if flux is None:
            return np.broadcast_to(ga, np.shape(z)).copy()
        return ga + flux(z)

    def h_fn(t, x, y, z):
        y = np.asarray(y)
        if grad_mult is not None:
            return ha + np.tanh(np.asarray(z)[..., 0])[..., None] * grad_mult
        if mult is None:
            return np.broadcast_to(ha, y.shape + (K,)).copy()
        return ha + y[..., None] * mult

    linear = f == "zero" and g == "zero" and h == "zero"
    odd = not (np.any(fa) or np.any(ga) or np.any(ha))
    name = "/".join(p for p in (f, g, h))
    return NonlinearCoefficients(
        f_fn, g_fn, h_fn, K,
        C=max(C_f, C_h) if C is None else C,
        alpha=a_g if alpha is None else alpha,
        beta=beta_h if beta is None else beta,
        linear=linear,
        odd=odd,
        name=name,
        parts={"f0": fa, "g0": ga, "h0": ha},
    )


def _h_source(h0, grid: SpatialGrid, spectrum: NoiseSpectrum | None, K: int) -> np.ndarray:
    if h0 is None:
        return np.zeros((grid.n_interior, K))
    if isinstance(h0, (tuple, list)) and h0 and isinstance(h0[0], str):
        kind, val = h0[0], h0[1]
        if kind == "additive":
            if spectrum is None:
                raise ValueError("additive noise needs a spectrum")
            return float(val) * spectrum.scaled_modes.T.copy()
        if kind == "mode-constant":
            s = np.zeros(K)
            v = np.atleast_1d(np.asarray(val, dtype=float))
            if len(v) > K:
                raise ValueError("more mode amplitudes than noise modes")
            s[: len(v)] = v
            return np.broadcast_to(s, (grid.n_interior, K)).copy()
        raise ValueError(f"unknown h0 kind {kind!r}")
    arr = np.asarray(h0, dtype=float)
    return np.broadcast_to(arr, (grid.n_interior, K)).copy()


def _parse_preset(s: str) -> tuple[str, float | None]:
    s = s.strip()
    if "(" in s:
        name, rest = s.split("(", 1)
        rest = rest.rstrip(")").strip()
        return name.strip(), float(rest) if rest else None
    return s, None


def natural_beta(spectrum: NoiseSpectrum, lip_htilde: float) -> float:
    """beta for the factored multiplicative form: sqrt(sum lam_i |e_i|_inf^2) * Lip(htilde)."""
    return float(np.sqrt(spectrum.trace_class_sum) * lip_htilde)


# --------------------------------------------------------------------------- audit


@dataclass
class HypothesisReport:
    declared: dict
    ratios: dict
    margin_basic: float
    margin_strong: float
    lam: float
    theta: float
    p: float
    source_norms: dict
    passed: bool
    witness: dict | None = None

    @property
    def contraction_ok(self) -> bool:
        return self.margin_basic > 0

    @property
    def strong_ok(self) -> bool:
        return self.margin_strong > 0

    def theorems(self) -> dict:
        """Which estimates have their structural hypotheses satisfied."""
        ok = self.passed and self.contraction_ok
        return {
            "existence_uniqueness": ok,
            "positive_part_estimate": ok,
            "comparison": ok,
            "lp_uniform_estimate": ok and self.strong_ok,
            "maximum_principle": ok and self.strong_ok,
        }

    def to_dict(self) -> dict:
        return {
            "declared": self.declared,
            "ratios": self.ratios,
            "margin_basic": self.margin_basic,
            "margin_strong": self.margin_strong,
            "lambda": self.lam,
            "theta": self.theta,
            "p": self.p,
            "source_norms": self.source_norms,
            "passed": self.passed,
            "witness": self.witness,
            "theorems": self.theorems(),
        }


def contraction_margins(lam: float, alpha: float, beta: float) -> tuple[float, float]:
    basic = lam - alpha - 0.5 * beta**2
    return basic, basic - 72.0 * beta**2


def audit_hypotheses(
    coeffs: NonlinearCoefficients,
    grid: SpatialGrid,
    spectrum: NoiseSpectrum | None,
    samples: int,
    seed: int,
    lam: float,
    theta: float = 0.0,
    p: float = 2.0,
    horizon: float = 1.0,
    scale: float = 2.0,
) -> HypothesisReport:
    """Sample difference quotients of f, g, h and compare with declared C, alpha, beta.

    Three families of pairs are drawn: y-only moves, z-only moves and joint
    moves, each at both O(1) and small separations. A ratio exceeding its
    declaration by more than 1e-9 fails the audit and records the tuple.
    """
    rng = np.random.default_rng(seed)
    d = grid.dim
    n = grid.n_interior
    x_all = grid.interior_nodes
    tol = 1e-9
    worst = {k: 0.0 for k in ("f", "g_y", "g_z", "h_y", "h_z", "f_joint", "g_joint", "h_joint")}
    witness = None

    def record(key, val, bound, tup):
        nonlocal witness
        if val > worst[key]:
            worst[key] = float(val)
        if val > bound + tol and witness is None:
            witness = {"coefficient": key, "ratio": float(val), "declared": float(bound), **tup}

    for s in range(samples):
        t = float(rng.uniform(0, horizon))
        i = int(rng.integers(grid.n_interior))
        x = x_all[i : i + 1]
        sep = scale if s % 2 == 0 else 1e-3
        y = scale * rng.standard_normal(1)
        z = scale * rng.standard_normal((1, d))
        dy = sep * rng.standard_normal(1)
        dz = sep * rng.standard_normal((1, d))
        y2, z2 = y + dy, z + dz
        tup = {"t": t, "x": x[0].tolist(), "y": y.tolist(), "z": z[0].tolist(),
               "y2": y2.tolist(), "z2": z2[0].tolist()}
        ady, adz = float(abs(dy[0])), float(np.linalg.norm(dz))

        def at_node(fn, ya, za):
            # sources are stored per node, so evaluate on every node and pick node i
            Y = np.full(n, ya[0])
            Z = np.broadcast_to(za, (n, d))
            return np.asarray(fn(t, x_all, Y, Z))[i]

        def diffs(ya, za, yb, zb):
            df = abs(float(at_node(coeffs.eval_f, ya, za) - at_node(coeffs.eval_f, yb, zb)))
            dg = float(np.linalg.norm(at_node(coeffs.eval_g, ya, za) - at_node(coeffs.eval_g, yb, zb)))
            dh = float(np.linalg.norm(at_node(coeffs.eval_h, ya, za) - at_node(coeffs.eval_h, yb, zb)))
            return df, dg, dh

        df, dg, dh = diffs(y, z, y2, z)  # y-only move
        record("f", df / ady, coeffs.C, tup)
        record("g_y", dg / ady, coeffs.C, tup)
        record("h_y", dh / ady, coeffs.C, tup)
        df, dg, dh = diffs(y, z, y, z2)  # z-only move
        record("f", df / adz, coeffs.C, tup)
        record("g_z", dg / adz, coeffs.alpha, tup)
        record("h_z", dh / adz, coeffs.beta, tup)
        df, dg, dh = diffs(y, z, y2, z2)  # joint move against the combined bound
        record("f_joint", df / (ady + adz), coeffs.C, tup)
        record("g_joint", dg / (coeffs.C * ady + coeffs.alpha * adz + 1e-300), 1.0, tup)
        record("h_joint", dh / (coeffs.C * ady + coeffs.beta * adz + 1e-300), 1.0, tup)

    basic, strong = contraction_margins(lam, coeffs.alpha, coeffs.beta)
    src = _source_norms(coeffs, grid, horizon, theta, p)
    return HypothesisReport(
        declared={"C": coeffs.C, "alpha": coeffs.alpha, "beta": coeffs.beta},
        ratios=worst,
        margin_basic=basic,
        margin_strong=strong,
        lam=lam,
        theta=theta,
        p=p,
        source_norms=src,
        passed=witness is None,
        witness=witness,
    )


def _source_norms(coeffs: NonlinearCoefficients, grid: SpatialGrid, horizon: float, theta: float,
                  p: float, n_times: int = 11) -> dict:
    from .norms import SpaceTimeField, dual_sharp_upper, lpq_norm, theta_dual_upper

    ts = np.linspace(0.0, horizon, n_times)
    x = grid.interior_nodes
    y = np.zeros(grid.n_interior)
    z = np.zeros((grid.n_interior, grid.dim))
    f0 = np.array([coeffs.eval_f(t, x, y, z) for t in ts])
    g0 = np.array([np.linalg.norm(coeffs.eval_g(t, x, y, z), axis=-1) for t in ts])
    h0 = np.array([np.linalg.norm(coeffs.eval_h(t, x, y, z), axis=-1) for t in ts])
    dt = horizon / (n_times - 1) if n_times > 1 else horizon
    F = SpaceTimeField.from_interior(grid, f0[1:], dt)
    G2 = SpaceTimeField.from_interior(grid, g0[1:] ** 2, dt)
    H2 = SpaceTimeField.from_interior(grid, h0[1:] ** 2, dt)
    return {
        "f0_L2L2": lpq_norm(F, 2, 2),
        "f0_dual_sharp_upper": dual_sharp_upper(F),
        "f0_theta_upper": theta_dual_upper(F, theta),
        "g0_L2L2": float(np.sqrt(lpq_norm(G2, 1, 1))),
        "h0_L2L2": float(np.sqrt(lpq_norm(H2, 1, 1))),
        "g0sq_theta_upper": theta_dual_upper(G2, theta),
        "h0sq_theta_upper": theta_dual_upper(H2, theta),
    }


def frozen_coefficients(coeffs: NonlinearCoefficients, grid: SpatialGrid, t: float, y: np.ndarray,
                        z: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate (f, g, h) along the supplied (y, z): the data of the frozen linear problem.

    ``z`` defaults to the centred gradient of ``y``.
    """
    y = np.asarray(y, dtype=float)
    if z is None:
        z = grid.gradient(y)
    x = grid.interior_nodes
    return (
        np.array(coeffs.eval_f(t, x, y, z), dtype=float),
        np.array(coeffs.eval_g(t, x, y, z), dtype=float),
        np.array(coeffs.eval_h(t, x, y, z), dtype=float),
    )
