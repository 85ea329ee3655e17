import time

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from qspde.domain import Interval, Rectangle, make_grid
from qspde.noise import SineModes, build_spectrum, path_seed, sample_path, zero_path
from qspde.nonlin import build_coefficients
from qspde.norms import SpaceTimeField, lpq_norm
from qspde.operators import assemble, identity, scalar_sine
from qspde.solver import (
    BlowUpError,
    ContractionError,
    GateError,
    LinearData,
    PhiFunction,
    Problem,
    contraction_ratio,
    damped_square,
    deterministic_path,
    energy_identity_residual,
    integrate,
    integrate_batch,
    ito_phi_residual,
    map_chunks,
    picard_params,
    picard_solve,
    positive_part_residual,
    power_contraction_factor,
    saturated_square,
    square,
)


def heat_problem(h):
    g = make_grid(Interval(1.0), h)
    return Problem(g, identity(1), build_coefficients(g, None), None)


def test_heat_oracle():
    P = heat_problem(1 / 256)
    x = P.grid.interior_nodes[:, 0]
    start = time.perf_counter()
    traj = integrate(P, np.sin(np.pi * x), deterministic_path(P, 1000, 1e-4))
    elapsed = time.perf_counter() - start
    exact = np.exp(-np.pi**2 * 0.1) * np.sin(np.pi * x)
    err = np.sqrt(P.grid.cell_volume * np.sum((traj.u[-1] - exact) ** 2))
    assert err <= 1e-3
    amp = traj.u[-1] @ np.sin(np.pi * x) / (np.sin(np.pi * x) @ np.sin(np.pi * x))
    assert amp == pytest.approx(0.3727, abs=1e-3)
    assert elapsed < 10


def test_zero_data_stays_zero():
    g = make_grid(Rectangle(1.0, 1.0), 1 / 8)
    spec = build_spectrum(SineModes(2.0), g, 3)
    co = build_coefficients(g, spec, f="sine-reaction(0.5)", g="gradient-flux(0.3)", h="multiplicative-noise(0.3)")
    traj = integrate(Problem(g, scalar_sine(2), co, spec), np.zeros(g.n_interior), sample_path(3, 20, 1e-3, 1))
    assert not traj.u.any()
    assert not traj.full()[:, ~g.interior_mask].any()


def test_single_additive_step_closed_form():
    g = make_grid(Interval(1.0), 1 / 16)
    spec = build_spectrum(SineModes(2.0), g, 3)
    co = build_coefficients(g, spec, h0=("additive", 0.7))
    dt = 1e-2
    path = sample_path(3, 1, dt, 4)
    traj = integrate(Problem(g, identity(1), co, spec), np.zeros(g.n_interior), path)
    A = assemble(identity(1), g).matrix
    rhs = 0.7 * spec.scaled_modes.T @ path.increments[0]
    expect = spla.spsolve((sp.identity(g.n_interior) - dt * A).tocsc(), rhs)
    np.testing.assert_allclose(traj.u[1], expect, rtol=1e-12, atol=1e-15)


def test_batch_matches_single_paths():
    g = make_grid(Interval(1.0), 1 / 16)
    spec = build_spectrum(SineModes(2.0), g, 2)
    co = build_coefficients(g, spec, f="sine-reaction(0.4)", h="multiplicative-noise(0.5)")
    P = Problem(g, identity(1), co, spec)
    xi = np.sin(np.pi * g.interior_nodes[:, 0])
    paths = [sample_path(2, 30, 1e-3, s) for s in (1, 2, 3)]
    batch = integrate_batch(P, xi, paths)
    for b, p in zip(batch, paths):
        np.testing.assert_allclose(b.u, integrate(P, xi, p).u, rtol=1e-12, atol=1e-14)


def test_linear_superposition():
    g = make_grid(Interval(1.0), 1 / 32)
    spec = build_spectrum(SineModes(2.0), g, 2)
    P = Problem(g, scalar_sine(1), build_coefficients(g, spec), spec)
    rng = np.random.default_rng(0)
    steps, dt = 20, 1e-3

    def data():
        return LinearData(rng.normal(size=(steps, g.n_interior)), rng.normal(size=(steps, g.n_interior, 1)),
                          rng.normal(size=(steps, g.n_interior, 2)))

    d1, d2 = data(), data()
    x1, x2 = rng.normal(size=g.n_interior), rng.normal(size=g.n_interior)
    path = sample_path(2, steps, dt, 5)
    u1 = integrate(P, x1, path, d1).u
    u2 = integrate(P, x2, path, d2).u
    both = LinearData(d1.w1 + 2 * d2.w1, d1.w2 + 2 * d2.w2, d1.w + 2 * d2.w)
    u12 = integrate(P, x1 + 2 * x2, path, both).u
    assert np.abs(u12 - (u1 + 2 * u2)).max() <= 1e-10


def test_blow_up_detected():
    g = make_grid(Interval(1.0), 1 / 16)
    co = build_coefficients(g, None, f="linear-reaction(2000.0)")
    with pytest.raises(BlowUpError):
        integrate(Problem(g, identity(1), co, None), np.ones(g.n_interior), zero_path(0, 200, 1e-2))


# --------------------------------------------------------------------------- Picard


def picard_problem():
    g = make_grid(Interval(1.0), 1 / 32)
    spec = build_spectrum(SineModes(2.0), g, 4)
    co = build_coefficients(g, spec, f="sine-reaction(0.3)", g="gradient-flux(0.3)", h="gradient-noise(0.8)")
    return Problem(g, identity(1), co, spec)


def test_picard_parameters():
    p = picard_params(1.0, 0.3, 0.3, 0.8)
    assert p.eps == pytest.approx(0.5 * (2 - 0.6 - 0.64) / (0.3 + 0.64))
    assert p.bound == pytest.approx((0.3 * p.eps + 0.3 + 0.64 * (1 + p.eps)) / 1.7)
    assert p.bound < 1
    assert picard_params(1.0, 0.0, 0.2, 0.0).eps_default


def test_picard_gate():
    with pytest.raises(GateError, match="alpha"):
        picard_params(1.0, 0.1, 0.6, 0.9)


def test_picard_linear_case_one_iterate():
    g = make_grid(Interval(1.0), 1 / 32)
    spec = build_spectrum(SineModes(2.0), g, 2)
    co = build_coefficients(g, spec, f0=1.0, h0=("additive", 0.4))
    P = Problem(g, identity(1), co, spec)
    _, trace = picard_solve(P, np.zeros(g.n_interior), sample_path(2, 30, 1e-3, 3))
    assert trace.iterations == 2
    assert trace.distances[0] > 0 and trace.distances[1] == 0.0


def test_picard_agrees_with_direct_stepping():
    P = picard_problem()
    xi = np.sin(np.pi * P.grid.interior_nodes[:, 0])
    path = sample_path(4, 50, 1e-3, 7)
    traj, trace = picard_solve(P, xi, path)
    assert trace.converged
    direct = integrate(P, xi, path)
    diff = lpq_norm(SpaceTimeField.from_interior(P.grid, traj.u[1:] - direct.u[1:], 1e-3), 2, 2)
    ref = lpq_norm(SpaceTimeField.from_interior(P.grid, direct.u[1:], 1e-3), 2, 2)
    assert diff / ref <= 2e-2


def test_picard_ratio_below_one_on_random_pairs():
    P = picard_problem()
    g = P.grid
    xi = np.sin(np.pi * g.interior_nodes[:, 0])
    steps, dt = 50, 1e-3
    paths = [sample_path(4, steps, dt, path_seed(2, j)) for j in range(5)]
    rng = np.random.default_rng(11)
    for _ in range(20):
        u = rng.normal(size=(steps + 1, g.n_interior))
        v = rng.normal(size=(steps + 1, g.n_interior))
        u[0] = v[0] = xi
        assert contraction_ratio(P, xi, paths, u, v) < 1


def test_picard_decay_matches_contraction_factor():
    P = picard_problem()
    g = P.grid
    xi = np.sin(np.pi * g.interior_nodes[:, 0])
    path = sample_path(4, 50, 1e-3, 7)
    _, trace = picard_solve(P, xi, path)
    rng = np.random.default_rng(12)
    u = rng.normal(size=(51, g.n_interior))
    v = u + 1e-4 * rng.normal(size=u.shape)
    u[0] = v[0] = xi
    factor = power_contraction_factor(P, xi, path, u, v, 12)
    assert factor < 1
    rates = np.sqrt(trace.ratios)
    assert np.all(rates <= factor + 0.05)


def test_picard_raises_on_growth():
    g = make_grid(Interval(1.0), 1 / 16)
    co = build_coefficients(g, None, f="linear-reaction(40.0)").with_constants(0.0, 0.0, 0.0)
    with pytest.raises(ContractionError) as err:
        picard_solve(Problem(g, identity(1), co, None), np.sin(np.pi * g.interior_nodes[:, 0]),
                     zero_path(0, 40, 1e-2), max_iter=30)
    assert err.value.trace.iterations >= 3


# --------------------------------------------------------------------------- identities


def test_energy_split_deterministic():
    P = heat_problem(1 / 256)
    x = P.grid.interior_nodes[:, 0]
    rec = energy_identity_residual(integrate(P, np.sin(np.pi * x), deterministic_path(P, 1000, 1e-4)))
    assert rec.right == pytest.approx(0.5, abs=1e-12)
    T = 0.1
    assert rec.terms["end"] == pytest.approx(np.exp(-2 * np.pi**2 * T) / 2, abs=1e-3)
    assert rec.terms["dissipation"] == pytest.approx((1 - np.exp(-2 * np.pi**2 * T)) / 2, abs=1e-3)
    assert rec.residual <= 1e-3


def test_zero_data_identity():
    P = heat_problem(1 / 32)
    rec = energy_identity_residual(integrate(P, np.zeros(P.grid.n_interior), deterministic_path(P, 10, 1e-3)))
    assert rec.left == 0.0 and rec.right == 0.0


def additive_problem(h=1 / 32):
    g = make_grid(Interval(1.0), h)
    spec = build_spectrum(SineModes(2.0), g, 8)
    return Problem(g, identity(1), build_coefficients(g, spec, h0=("additive", 0.5)), spec)


def test_phi_square_reduces_to_energy():
    g = make_grid(Interval(1.0), 1 / 32)
    spec = build_spectrum(SineModes(2.0), g, 4)
    co = build_coefficients(g, spec, f="sine-reaction(0.4)", g="gradient-flux(0.3)", h="multiplicative-noise(0.4)",
                            f0=0.2)
    P = Problem(g, scalar_sine(1), co, spec)
    traj = integrate(P, np.sin(np.pi * g.interior_nodes[:, 0]), sample_path(4, 100, 1e-3, 9))
    e = energy_identity_residual(traj)
    p = ito_phi_residual(traj, square())
    assert abs(e.left - p.left) <= 1e-12 * abs(e.left)
    assert abs(e.right - p.right) <= 1e-12 * abs(e.right)
    assert abs(e.residual - p.residual) <= 1e-12 * max(e.left, 1.0)


def test_saturated_phi_additive_scenario():
    P = additive_problem()
    xi = np.sin(np.pi * P.grid.interior_nodes[:, 0])
    trajs = integrate_batch(P, xi, [sample_path(8, 100, 1e-3, path_seed(4, j)) for j in range(20)])
    rel = np.mean([ito_phi_residual(t, saturated_square()).relative for t in trajs])
    assert rel <= 0.05


def test_time_dependent_phi_deterministic():
    P = heat_problem(1 / 256)
    x = P.grid.interior_nodes[:, 0]
    rec = ito_phi_residual(integrate(P, np.sin(np.pi * x), deterministic_path(P, 1000, 1e-4)), damped_square())
    assert rec.residual <= 1e-3


def test_phi_must_vanish_derivative_at_zero():
    bad = PhiFunction(lambda t, y: y, lambda t, y: 1 + 0 * y, lambda t, y: 0 * y)
    P = heat_problem(1 / 16)
    traj = integrate(P, np.ones(P.grid.n_interior), deterministic_path(P, 3, 1e-3))
    with pytest.raises(ValueError):
        ito_phi_residual(traj, bad)


def test_positive_part_negative_trajectory_is_null():
    P = heat_problem(1 / 32)
    x = P.grid.interior_nodes[:, 0]
    rec = positive_part_residual(integrate(P, -np.sin(np.pi * x), deterministic_path(P, 50, 1e-3)), square())
    assert all(v == 0.0 for v in rec.terms.values())


def test_positive_part_positive_trajectory_matches_phi():
    P = heat_problem(1 / 32)
    x = P.grid.interior_nodes[:, 0]
    traj = integrate(P, np.sin(np.pi * x), deterministic_path(P, 50, 1e-3))
    assert traj.u.min() > 0
    a = positive_part_residual(traj, saturated_square())
    b = ito_phi_residual(traj, saturated_square())
    assert a.left == pytest.approx(b.left, rel=1e-12) and a.right == pytest.approx(b.right, rel=1e-12)


def test_positive_part_sign_changing():
    P = additive_problem()
    xi = np.sin(2 * np.pi * P.grid.interior_nodes[:, 0])
    trajs = integrate_batch(P, xi, [sample_path(8, 100, 1e-3, path_seed(5, j)) for j in range(20)])
    rel = np.mean([positive_part_residual(t, square()).relative for t in trajs])
    assert rel <= 0.07


def test_odd_symmetry_under_path_negation():
    g = make_grid(Interval(1.0), 1 / 32)
    spec = build_spectrum(SineModes(2.0), g, 3)
    co = build_coefficients(g, spec, f="sine-reaction(0.4)", g="gradient-flux(0.3)", h="multiplicative-noise(0.3)")
    P = Problem(g, identity(1), co, spec)
    xi = np.sin(2 * np.pi * g.interior_nodes[:, 0])
    path = sample_path(3, 40, 1e-3, 8)
    u1 = integrate(P, xi, path).u
    u2 = integrate(P, -xi, path).u
    np.testing.assert_array_equal(u2, -u1)


@pytest.mark.parametrize("workers", [1, 2, 3])
def test_map_chunks_order_independent_of_workers(workers):
    items = list(range(37))
    assert map_chunks(lambda c: [i * i for i in c], items, workers) == [i * i for i in items]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_path_negation_gives_negated_solution(seed):
    # additive noise with zero drift: u is linear and odd in the path
    P = additive_problem(1 / 16)
    path = sample_path(8, 10, 1e-3, seed)
    a = integrate(P, np.zeros(P.grid.n_interior), path).u
    b = integrate(P, np.zeros(P.grid.n_interior), path.negated()).u
    np.testing.assert_allclose(b, -a, rtol=0, atol=1e-14)
