import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qspde.domain import Interval, make_grid
from qspde.noise import SineModes, build_spectrum, sample_path
from qspde.nonlin import build_coefficients
from qspde.operators import identity
from qspde.solver import GateError, Problem, integrate, zero_path
from qspde.verify import (
    ItoSpec,
    constant_bound_sides,
    count_violations,
    coupled_paths_identical,
    fit_constant,
    linear_data_from_sources,
    max_principle_sides,
    null_tolerance,
    run_apriori_estimate,
    run_comparison,
    run_lp_uniform_estimate,
    run_max_principle,
    run_paths,
    run_positive_part_estimate,
    seeds_for,
)

G = make_grid(Interval(1.0), 1 / 32)
SP = build_spectrum(SineModes(2.0), G, 4)
X = G.interior_nodes[:, 0]


def problem(**kw):
    return Problem(G, identity(1), build_coefficients(G, SP, **kw), SP)


def test_fit_constant_and_violations():
    assert fit_constant([1.0, 3.0], [1.0, 2.0]) == pytest.approx(3.0)
    assert fit_constant([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert fit_constant([1.0], [0.0]) == float("inf")
    assert count_violations([1.0, 5.0], [1.0, 1.0], 2.0, 0.0) == 1


def test_calibration_and_evaluation_seeds_disjoint():
    assert not set(seeds_for(3, 200, 0)) & set(seeds_for(3, 200, 1))


def test_coupled_paths_rederive_bitwise():
    assert all(coupled_paths_identical(s, 4, 50, 1e-3) for s in seeds_for(1, 5, 1))


def test_comparison_identical_data_exact():
    P = problem(f="sine-reaction(0.3)", h="multiplicative-noise(0.3)")
    rep = run_comparison(P, P, np.sin(np.pi * X), np.sin(np.pi * X), 50, 1e-3, 16, 2, 0.0)
    assert rep.violation_fraction == 0.0
    assert all(m == 0.0 for m in rep.min_difference)


def test_comparison_deterministic_source_gap_positive():
    P1 = problem()
    P2 = Problem(G, P1.a, P1.coeffs.shifted_f(lambda t, x, y, z: 1.0 + 0 * y), SP)
    rep = run_comparison(P1, P2, np.zeros(G.n_interior), np.zeros(G.n_interior), 20, 1e-3, 4, 0, 0.0)
    # interior difference is the heat solution with unit source, positive after the first step
    assert rep.violation_fraction == 0.0
    u1 = integrate(P1, np.zeros(G.n_interior), zero_path(4, 20, 1e-3)).u
    u2 = integrate(P2, np.zeros(G.n_interior), zero_path(4, 20, 1e-3)).u
    assert (u2 - u1)[1:].min() > 0


def test_comparison_rejects_unordered_data():
    P = problem(f="sine-reaction(0.3)")
    with pytest.raises(ValueError):
        run_comparison(P, P, np.ones(G.n_interior), np.zeros(G.n_interior), 5, 1e-3, 2, 0, 0.0)
    P2 = problem(f="sine-reaction(0.3)", h="multiplicative-noise(0.3)")
    with pytest.raises(ValueError, match="identical g and h"):
        run_comparison(P, P2, np.zeros(G.n_interior), np.zeros(G.n_interior), 5, 1e-3, 2, 0, 0.0)


def test_max_principle_null_case():
    P = problem(f0=0.5, h0=("mode-constant", [0.3, 0.2]))
    spec = ItoSpec(1.5, 0.5, [0.3, 0.2])
    rep = run_max_principle(P, np.sin(np.pi * X), spec, 100, 1e-3, 20, 40, 3)
    assert all(r == 0.0 for r in rep.rhs_eval)
    assert max(rep.lhs_eval) <= null_tolerance([0.0], 1e-12)
    assert rep.passed


def test_max_principle_rejects_bad_exponents():
    P = problem()
    with pytest.raises(ValueError):
        run_max_principle(P, np.zeros(G.n_interior), ItoSpec(1.0), 10, 1e-3, 2, 2, 0, p=1.5)
    with pytest.raises(ValueError):
        run_max_principle(P, np.zeros(G.n_interior), ItoSpec(1.0), 10, 1e-3, 2, 2, 0, theta=1.0)


def test_max_principle_large_constant_bound():
    P = problem(f="sine-reaction(0.3)", h="multiplicative-noise(0.2)")
    xi = np.sin(np.pi * X)
    rep = run_max_principle(P, xi, ItoSpec(10.0), 100, 1e-3, 50, 200, 4)
    assert rep.violations == 0 and max(rep.lhs_eval) == 0.0


def test_constant_bound_paths_agree():
    P = Problem(G, identity(1), build_coefficients(G, None, f="sine-reaction(0.4)", f0=0.3), None)
    xi = 0.8 * np.sin(np.pi * X)
    traj = integrate(P, xi, zero_path(1, 50, 1e-3))
    a = max_principle_sides(P, ItoSpec(0.5), 0.0, 2.0)(traj)
    b = constant_bound_sides(P, 0.5, 0.0, 2.0)(traj)
    assert abs(a[0] - b[0]) <= 1e-12 and abs(a[1] - b[1]) <= 1e-12 * max(1.0, abs(a[1]))


def test_positive_part_null_scenario():
    P = problem(f0=-0.2)
    rep = run_positive_part_estimate(P, -np.sin(np.pi * X), 50, 1e-3, 10, 20, 5)
    assert max(rep.lhs_eval + rep.lhs_cal) == 0.0 and rep.passed


def test_positive_part_heat_decay():
    P = problem()
    rep = run_positive_part_estimate(P, np.sin(np.pi * X), 100, 1e-3, 5, 10, 6)
    assert rep.passed and 0 < rep.k < np.inf


def test_positive_part_sign_flip_symmetry():
    P = problem(f="sine-reaction(0.3)", g="gradient-flux(0.3)", h="multiplicative-noise(0.3)", f0=0.2)
    Pn = Problem(G, P.a, P.coeffs.negated(), SP)
    xi = np.sin(2 * np.pi * X) + 0.1
    seeds = seeds_for(8, 6, 1)
    up = run_paths(P, xi, seeds, 40, 1e-3, lambda t: float(np.maximum(t.u, 0).sum()))
    neg = []
    for s in seeds:
        t = integrate(Pn, -xi, sample_path(4, 40, 1e-3, s))
        neg.append(float(np.maximum(-t.u, 0).sum()))
    np.testing.assert_allclose(up, neg, rtol=1e-12)


def test_lp_uniform_gate():
    P = problem(h="gradient-noise(0.2)")
    with pytest.raises(GateError, match="72"):
        run_lp_uniform_estimate(P, np.zeros(G.n_interior), 10, 1e-3, 2, 2, 0)


def test_lp_uniform_zero_data():
    rep = run_lp_uniform_estimate(problem(), np.zeros(G.n_interior), 20, 1e-3, 4, 4, 0)
    assert rep.lhs_eval == [0.0] * 4 and rep.rhs_eval == [0.0] * 4


@pytest.mark.parametrize("s", [0.5, 2.0])
def test_lp_uniform_fitted_constant_scale_invariant(s):
    base = dict(f0=1.0, h0=("additive", 0.5))
    xi = np.sin(np.pi * X)
    ref = run_lp_uniform_estimate(problem(**base), xi, 50, 1e-3, 20, 20, 9)
    sc = run_lp_uniform_estimate(problem(f0=s, h0=("additive", 0.5 * s)), s * xi, 50, 1e-3, 20, 20, 9)
    assert sc.k == pytest.approx(ref.k, rel=1e-9)


def test_apriori_zero_data():
    P = problem()
    data = linear_data_from_sources(P.coeffs, G, 20, 1e-3)
    rep = run_apriori_estimate(P, np.zeros(G.n_interior), data, 20, 1e-3, 3, 3, 0)
    assert rep.lhs_eval == [0.0] * 3


def test_apriori_fixed_constant_reused():
    P = problem(f0=1.0, h0=("additive", 0.5))
    data = linear_data_from_sources(P.coeffs, G, 50, 1e-3)
    fitted = run_apriori_estimate(P, np.sin(np.pi * X), data, 50, 1e-3, 20, 20, 1)
    again = run_apriori_estimate(P, np.sin(np.pi * X), data, 50, 1e-3, 0, 20, 2, k=fitted.k)
    assert again.lhs_cal == [] and again.violations == 0


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_then_assert_never_shares_paths(seed):
    P = problem(h0=("additive", 0.3))
    rep = run_positive_part_estimate(P, np.sin(np.pi * X), 10, 1e-3, 3, 3, seed)
    assert not set(rep.seeds_cal) & set(rep.seeds_eval)
