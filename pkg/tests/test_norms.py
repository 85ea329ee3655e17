import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qspde.domain import Interval, Rectangle, make_grid
from qspde.norms import (
    INF,
    SpaceTimeField,
    dual_sharp_upper,
    evaluate_norm,
    fit_sobolev_constant,
    gradient_sq,
    h1_norm,
    lpq_norm,
    sharp_norm,
    sobolev_exponent,
    space_norm,
    theta_corners,
    theta_dual_upper,
)

G = make_grid(Interval(1.0), 1 / 16)
G2 = make_grid(Rectangle(1.0, 1.0), 1 / 8)


def field(grid, vals, dt):
    return SpaceTimeField.from_interior(grid, vals, dt)


def test_unit_constant_all_exponents():
    g = make_grid(Interval(1.0), 1 / 64)
    u = SpaceTimeField(g, np.ones((10, g.n_nodes)), 0.1)
    for p in (1, 2, 3.5, INF):
        for q in (1, 2, INF):
            assert lpq_norm(u, p, q) == pytest.approx(1.0)
    assert sharp_norm(u) == pytest.approx(1.0)
    assert dual_sharp_upper(u) == pytest.approx(1.0)
    assert theta_dual_upper(u, 0.0) == pytest.approx(1.0)


def test_linear_in_time_field():
    g = make_grid(Interval(1.0), 1 / 16)
    m = 10_000
    dt = 1 / m
    s = dt * np.arange(1, m + 1)
    u = SpaceTimeField(g, np.broadcast_to(s[:, None], (m, g.n_nodes)), dt)
    assert lpq_norm(u, 2, 2) == pytest.approx(1 / math.sqrt(3), abs=1e-4)
    assert lpq_norm(u, 2, INF) == pytest.approx(1.0)


def test_sharp_of_time_constant_field():
    g = make_grid(Rectangle(1.0, 1.0), 1 / 16)
    x = g.interior_nodes
    xi = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    t, m = 0.3, 30
    u = field(g, np.broadcast_to(xi, (m, g.n_interior)), t / m)
    full = g.embed(xi)
    expect = max(space_norm(g, full, 2), math.sqrt(t) * space_norm(g, full, 6.0))
    assert sharp_norm(u) == pytest.approx(expect, rel=1e-12)


def test_theta_corners_one_dimension():
    assert theta_corners(1, 0.5) == [(INF, 2.0), (2.0, INF)]
    assert theta_corners(1, 0.0) == [(INF, 1.0), (1.0, INF)]


def test_theta_corners_two_dimensions():
    c = theta_corners(2, 0.0)
    assert c[0] == (INF, 1.0)
    assert c[1][0] == pytest.approx(1.5)


def test_dual_upper_is_min_of_candidates():
    rng = np.random.default_rng(0)
    v = field(G2, rng.normal(size=(5, G2.n_interior)), 0.1)
    assert dual_sharp_upper(v) == min(lpq_norm(v, 2, 1), lpq_norm(v, 1.5, 2))


def _pairs(grid, n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        m = int(rng.integers(1, 12))
        dt = float(rng.uniform(0.01, 0.2))
        scale_u, scale_v = np.exp(rng.normal(size=2))
        u = scale_u * rng.standard_normal((m, grid.n_interior)) ** 3
        v = scale_v * rng.standard_normal((m, grid.n_interior))
        yield field(grid, u, dt), field(grid, v, dt)


@pytest.mark.parametrize("grid", [G, G2])
def test_holder_probe(grid):
    w = grid.quad_weights
    for u, v in _pairs(grid, 100, 4):
        integral = abs(u.dt * np.sum(w * u.values * v.values))
        assert integral <= sharp_norm(u) * dual_sharp_upper(v) * (1 + 1e-12)


@pytest.mark.parametrize("grid", [G, G2])
@pytest.mark.parametrize("theta", [0.0, 0.3, 0.7])
def test_l11_dominated_by_theta_surrogate(grid, theta):
    area = float(grid.quad_weights.sum())
    for _, v in _pairs(grid, 50, 5):
        T = v.horizon
        c = max(area ** (1 - 1 / p) * T ** (1 - 1 / q) for p, q in theta_corners(grid.dim, theta))
        assert lpq_norm(v, 1, 1) <= c * theta_dual_upper(v, theta) * (1 + 1e-12)


def test_h1_norm_of_sine():
    g = make_grid(Interval(1.0), 1 / 256)
    w = np.sin(np.pi * g.interior_nodes[:, 0])
    expect = math.sqrt(0.5 + np.pi**2 / 2)
    assert abs(h1_norm(g, w) - expect) / expect < 1e-3
    assert h1_norm(g, np.zeros(g.n_interior)) == 0.0


def _corpus(grid):
    x = grid.interior_nodes
    out = []
    for k in (1, 2, 3):
        out.append(np.prod(np.sin(k * np.pi * x), axis=1))
    c = 0.5 * np.ones(grid.dim)
    out.append(np.prod(x * (1 - x), axis=1) * np.exp(-np.sum((x - c) ** 2, axis=1) / 0.05))
    out.append(np.prod(np.minimum(x, 1 - x), axis=1))
    return out


@pytest.mark.parametrize("shape", [Interval(1.0), Rectangle(1.0, 1.0)])
def test_sobolev_constant_stable_under_refinement(shape):
    hs = (1 / 32, 1 / 64, 1 / 128) if shape.dim == 1 else (1 / 16, 1 / 32, 1 / 64)
    cs = [fit_sobolev_constant(g, _corpus(g)) for g in (make_grid(shape, h) for h in hs)]
    assert max(cs) / min(cs) <= 1.05
    if shape.dim == 1:
        assert cs[-1] <= 0.5 + 1e-12  # sup|w| <= |w'|_2 / 2 on the unit interval


def test_sharp_norm_energy_bound_fit_then_assert():
    g = make_grid(Rectangle(1.0, 1.0), 1 / 16)
    rng = np.random.default_rng(9)

    def sample():
        m = int(rng.integers(2, 10))
        a = rng.normal(size=(m, 3))
        base = [np.prod(np.sin(k * np.pi * g.interior_nodes), axis=1) for k in (1, 2, 3)]
        vals = a @ np.array(base) + 0.1 * rng.normal(size=(m, g.n_interior))
        u = field(g, vals, 0.05)
        energy = lpq_norm(u, 2, INF) ** 2 + 0.05 * sum(gradient_sq(g, v) for v in vals)
        return sharp_norm(u), math.sqrt(energy)

    cal = [sample() for _ in range(30)]
    c1 = 2.0 * max(l / r for l, r in cal)
    assert all(l <= c1 * r for l, r in (sample() for _ in range(100)))


def test_evaluate_norm_lookup():
    u = field(G, np.ones((4, G.n_interior)), 0.25)
    assert evaluate_norm("L2L2", u).value == pytest.approx(lpq_norm(u, 2, 2))
    assert evaluate_norm("theta_dual_upper(0.5)", u).exponents == ((INF, 2.0), (2.0, INF))
    with pytest.raises(ValueError):
        evaluate_norm("nope", u)


def test_sobolev_exponents():
    assert sobolev_exponent(1) == INF and sobolev_exponent(2) == 6.0 and sobolev_exponent(3) == 6.0


vals = arrays(np.float64, (3, G.n_interior), elements=st.floats(-1e3, 1e3, allow_nan=False))
EXPONENTS = [(2, 2), (1, 1), (2, INF), (INF, 2), (3, 1.5)]


@settings(max_examples=50, deadline=None)
@given(vals, vals, st.floats(-5, 5, allow_nan=False))
def test_norms_homogeneous_and_subadditive(a, b, s):
    u, v = field(G, a, 0.1), field(G, b, 0.1)
    w = field(G, a + b, 0.1)
    su = field(G, s * a, 0.1)
    for p, q in EXPONENTS:
        nu = lpq_norm(u, p, q)
        assert lpq_norm(su, p, q) == pytest.approx(abs(s) * nu, rel=1e-9, abs=1e-9)
        assert lpq_norm(w, p, q) <= nu + lpq_norm(v, p, q) + 1e-9 * (1 + nu)
    assert sharp_norm(w) <= sharp_norm(u) + sharp_norm(v) + 1e-9 * (1 + sharp_norm(u))


@settings(max_examples=50, deadline=None)
@given(vals, arrays(np.float64, (3, G.n_interior), elements=st.floats(0, 1)))
def test_lpq_monotone_in_magnitude(a, shrink):
    u = field(G, a, 0.1)
    smaller = field(G, a * shrink, 0.1)
    for p, q in EXPONENTS:
        assert lpq_norm(smaller, p, q) <= lpq_norm(u, p, q) * (1 + 1e-12) + 1e-300
