from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from hems_lp.model import ExogenousProfile, Tariff
from hems_lp.problem import LpStandardForm, build_lp, extract_trajectory
from hems_lp.solver import (IterationLimitError, SolveOptions, Status, dual_by_constraint,
                            solve)

from helpers import HOME, random_params, random_profile, tariff_for_row


def test_single_step_grid_only():
    params = replace(HOME, e0=HOME.e_min)
    lp, index = build_lp(params, ExogenousProfile([0.0], [1.0]), Tariff([0.11]))
    out = solve(lp)
    x = extract_trajectory(out.x)
    assert out.optimal
    assert x.p_grid[0] == pytest.approx(1.0, abs=1e-12)
    assert out.objective == pytest.approx(0.11, abs=1e-12)
    assert dual_by_constraint(out, index, "balance", 0) == pytest.approx(0.11, abs=1e-12)


def test_zero_inputs_give_zero_plan():
    prof = ExogenousProfile(np.zeros(6), np.zeros(6))
    lp, _ = build_lp(HOME, prof, Tariff.flat(0.11, 6, alpha=0.001, beta=0.001))
    out = solve(lp)
    np.testing.assert_allclose(out.x, 0.0, atol=1e-12)
    assert out.objective == pytest.approx(0.0, abs=1e-12)


def test_single_step_discharge_covers_load():
    lp, _ = build_lp(HOME, ExogenousProfile([0.0], [1.0]),
                     Tariff([0.11], alpha=0.001, beta=0.001))
    out = solve(lp)
    x = extract_trajectory(out.x)
    assert x.p_dis[0] == pytest.approx(1.0, abs=1e-12)
    assert x.p_grid[0] == pytest.approx(0.0, abs=1e-12)
    assert out.objective == pytest.approx(0.001, abs=1e-12)


def test_textbook_lp_and_duals():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18, x, y >= 0
    lp = LpStandardForm.from_arrays([-3, -5], A_ub=[[1, 0], [0, 2], [3, 2]], b_ub=[4, 12, 18],
                                    lb=[0, 0])
    out = solve(lp)
    np.testing.assert_allclose(out.x, [2, 6], atol=1e-12)
    assert out.objective == pytest.approx(-36)
    np.testing.assert_allclose(out.lam, [0, 1.5, 1], atol=1e-12)
    assert out.duality_gap <= 1e-12


def test_beale_cycling_example_terminates():
    c = [-0.75, 20, -0.5, 6]
    A = [[0.25, -8, -1, 9], [0.5, -12, -0.5, 3], [0, 0, 1, 0]]
    lp = LpStandardForm.from_arrays(c, A_ub=A, b_ub=[0, 0, 1], lb=np.zeros(4))
    for opts in (SolveOptions(), SolveOptions(bland_after=0)):
        out = solve(lp, opts)
        assert out.objective == pytest.approx(-1.25)
        np.testing.assert_allclose(out.x, [1, 0, 1, 0], atol=1e-12)


def test_infeasible_returns_farkas_certificate():
    lp = LpStandardForm.from_arrays([1.0], A_ub=[[1.0], [-1.0]], b_ub=[1.0, -2.0])
    out = solve(lp)
    assert out.status is Status.INFEASIBLE
    assert out.farkas is not None
    assert out.farkas.margin(lp) > 0
    assert set(out.farkas.ineq_rows) == {0, 1}


def test_infeasible_equality_system():
    lp = LpStandardForm.from_arrays([0, 0], A_eq=[[1, 1], [1, 1]], b_eq=[1, 2], lb=[0, 0])
    out = solve(lp)
    assert out.status is Status.INFEASIBLE
    assert out.farkas.margin(lp) > 0


def test_unbounded_returns_improving_ray():
    lp = LpStandardForm.from_arrays([-1.0, 0.0], A_ub=[[-1.0, 1.0]], b_ub=[0.0], lb=[0, 0])
    out = solve(lp)
    assert out.status is Status.UNBOUNDED
    assert lp.c @ out.ray < 0
    assert np.all(lp.A_ub @ out.ray <= 1e-12)
    assert np.all(out.ray >= -1e-12)


def test_iteration_limit_is_its_own_error():
    rng = np.random.default_rng(0)
    lp, _ = build_lp(HOME, random_profile(rng, 24), tariff_for_row(rng, 24, 4))
    with pytest.raises(IterationLimitError):
        solve(lp, SolveOptions(max_iter=2))


def test_variable_bounds_respected():
    lp = LpStandardForm.from_arrays([1.0, -1.0], A_eq=[[1, 1]], b_eq=[1.0], lb=[-2, -3],
                                    ub=[2, 3])
    out = solve(lp)
    np.testing.assert_allclose(out.x, [-2, 3], atol=1e-12)
    assert out.duality_gap <= 1e-12


def test_slack_rows_have_zero_multipliers():
    rng = np.random.default_rng(5)
    for row in range(1, 6):
        lp, _ = build_lp(random_params(rng), random_profile(rng, 12), tariff_for_row(rng, 12, row))
        out = solve(lp)
        slack = lp.b_ub - lp.A_ub @ out.x
        assert np.all(out.lam >= -1e-12)
        assert np.all(np.abs(out.lam[slack > 1e-7]) <= 1e-9)


def test_strong_duality_on_random_instances():
    rng = np.random.default_rng(6)
    for k in range(15):
        lp, _ = build_lp(random_params(rng), random_profile(rng, 24),
                         tariff_for_row(rng, 24, 1 + k % 5))
        out = solve(lp)
        assert out.optimal
        assert out.duality_gap <= 1e-8 * (1 + abs(out.objective))
        assert out.primal_residual(lp) <= 1e-9
        assert out.complementarity(lp) <= 1e-8


def test_deterministic():
    rng = np.random.default_rng(7)
    lp, _ = build_lp(HOME, random_profile(rng, 24), tariff_for_row(rng, 24, 5))
    a, b = solve(lp), solve(lp)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.lam, b.lam)
    assert a.iterations == b.iterations


def test_equilibration_gives_same_optimum():
    rng = np.random.default_rng(8)
    lp, _ = build_lp(random_params(rng), random_profile(rng, 24), tariff_for_row(rng, 24, 2))
    plain, scaled = solve(lp), solve(lp, SolveOptions(equilibrate=True))
    assert scaled.objective == pytest.approx(plain.objective, abs=1e-10)
    assert scaled.duality_gap <= 1e-9


def test_matches_reference_lp_solver():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = np.random.default_rng(9)
    for k in range(10):
        lp, _ = build_lp(random_params(rng), random_profile(rng, 24),
                         tariff_for_row(rng, 24, 1 + k % 5))
        ref = linprog(lp.c, A_ub=lp.A_ub, b_ub=lp.b_ub, A_eq=lp.A_eq, b_eq=lp.b_eq,
                      bounds=[(None, None)] * lp.n_vars, method="highs")
        assert solve(lp).objective == pytest.approx(ref.fun, abs=1e-9)


def test_random_general_lps_against_reference():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = np.random.default_rng(10)
    for _ in range(25):
        n, m = rng.integers(2, 7), rng.integers(1, 6)
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0, 1, n)
        b = A @ x0 + rng.uniform(0, 1, m)
        c = rng.normal(size=n)
        lp = LpStandardForm.from_arrays(c, A_ub=A, b_ub=b, lb=np.zeros(n), ub=np.full(n, 2.0))
        ref = linprog(c, A_ub=A, b_ub=b, bounds=[(0, 2)] * n, method="highs")
        out = solve(lp)
        assert out.objective == pytest.approx(ref.fun, abs=1e-9)
        assert out.duality_gap <= 1e-9
