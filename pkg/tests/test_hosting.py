"""
Tests for the fair hosting-capacity optimisation.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from gridgate.config import DEFAULT_LAMBDAS
from gridgate.errors import ConvexityViolatedError, DegenerateCandidateSetError, InfeasibleError
from gridgate.services.hosting import (
    HostingStudy,
    LinearConstraints,
    ParetoRow,
    epigraph_reformulate,
    fairness_price_frame,
    nominal_power_bounds,
    pareto_frame,
    solve_hosting,
    sweep_lambda,
)

from conftest import TOY_SETTINGS
from oracles import CABLE_240, lattice_search, star_grid

GRID_FEASIBILITY = 1e-6


def _assert_feasible(problem, solution):
    assert problem.grid.violated(solution.alpha, tol=GRID_FEASIBILITY) == []
    assert np.all(solution.alpha >= 0.0)
    assert np.all(solution.alpha <= problem.alpha_upper + 1e-6)


# Problem assembly ------------------------------------------------------------

def test_nominal_power_bound():
    load = np.array([[2.0, 1.0, 2.0]])
    pv = np.array([0.0, 0.5, 1.0])
    # min over daylight steps of (load + p_nom) / G
    assert nominal_power_bounds(load, pv, np.array([4.0]))[0] == pytest.approx(6.0)
    assert nominal_power_bounds(load, np.zeros(3), np.array([4.0]))[0] == 0.0


def test_one_candidate_without_fairness(toy_one):
    qp = epigraph_reformulate(toy_one.problem(0.0))
    assert qp.k == 1
    assert qp.weight == 0.0


def test_one_candidate_rejects_fairness(toy_one):
    with pytest.raises(DegenerateCandidateSetError):
        toy_one.solve(1.0)


def test_retail_below_feed_in(toy_two):
    econ = toy_two.econ.model_copy(update={"c_plus": 0.10})
    problem = toy_two.problem(0.0)
    with pytest.raises(ConvexityViolatedError):
        epigraph_reformulate(replace(problem, econ=econ))


def test_infeasible_without_pv(toy_two):
    problem = toy_two.problem(0.0)
    broken = LinearConstraints(np.zeros((1, 2)), np.array([-1.0]), ["v-min:N1@0"])
    with pytest.raises(InfeasibleError) as info:
        epigraph_reformulate(replace(problem, grid=broken))
    assert info.value.violated == ["v-min:N1@0"]


def test_negative_lambda(toy_two):
    with pytest.raises(ValueError):
        toy_two.problem(-1.0)


def test_night_steps_have_no_epigraph_rows(toy_two):
    qp = epigraph_reformulate(toy_two.problem(0.0))
    assert qp.n == qp.k + 2 * len(toy_two.day)
    assert len(qp.day) == len(toy_two.day) < toy_two.pv_curve.steps


# Exactness against a lattice search -----------------------------------------

@pytest.mark.parametrize("name", ["toy_one", "toy_two", "toy_three"])
def test_matches_lattice_search(name, request):
    study = request.getfixturevalue(name)
    problem = study.problem(0.0)
    solution = solve_hosting(problem)
    _assert_feasible(problem, solution)
    point, value = lattice_search(problem, step=0.1)
    # the lattice is a subset of the continuous feasible set
    assert solution.cost <= value + 1e-6 * abs(value)
    assert np.max(np.abs(solution.alpha - point)) <= 0.1 + 1e-6


def test_voltage_rise_binds(toy_one):
    solution = toy_one.solve(0.0)
    assert solution.alpha[0] < toy_one.alpha_upper[0] - 0.1
    assert any(label.startswith("v-max:N1") for label in solution.binding)


def test_solver_objective_matches_costs(toy_two):
    for lam in (0.0, 50.0):
        solution = toy_two.solve(lam)
        assert solution.solver_objective == pytest.approx(solution.objective, rel=1e-6)
        assert solution.kkt_residual <= 1e-6


def test_fairness_weight_is_relative_to_cost_unit(toy_two):
    problem = toy_two.problem(10.0)
    assert problem.cost_unit == pytest.approx(1500.0 * 18.0)
    qp = epigraph_reformulate(problem)
    assert qp.scale == problem.cost_unit
    assert qp.weight == pytest.approx(10.0)
    solution = solve_hosting(problem)
    assert solution.cost_unit == problem.cost_unit
    assert solution.fairness_penalty == pytest.approx(10.0 * problem.cost_unit * solution.M_U)


def test_expensive_panels_are_not_built():
    settings = TOY_SETTINGS.with_overrides(economics={"c_cap": 1e6})
    study = HostingStudy(star_grid([100.0, 100.0], [10.0, 10.0], [CABLE_240, CABLE_240]), settings)
    solution = study.solve(0.0)
    np.testing.assert_allclose(solution.alpha, 0.0, atol=1e-6)


def test_unconstrained_candidates_fill_their_bound(toy_equal):
    solution = toy_equal.solve(0.0)
    np.testing.assert_allclose(solution.alpha, toy_equal.alpha_upper, rtol=1e-6)


# Fairness --------------------------------------------------------------------

def test_equal_candidates_get_equal_shares(toy_equal):
    solution = toy_equal.solve(1e6)
    assert solution.alpha_per_unit[0] == pytest.approx(solution.alpha_per_unit[1], rel=1e-6)
    assert solution.M_U < 1e-9


def test_perfect_fairness(toy_two):
    solution = toy_two.solve(math.inf)
    per_unit = solution.alpha_per_unit
    np.testing.assert_allclose(per_unit, per_unit[0], rtol=1e-12)
    assert solution.M_U < 1e-20
    assert solution.objective == pytest.approx(solution.cost)
    _assert_feasible(toy_two.problem(math.inf), solution)


def test_fairness_costs_capacity(toy_two):
    free = toy_two.solve(0.0)
    fair = toy_two.solve(math.inf)
    assert free.total_kwp >= fair.total_kwp - 1e-6
    assert free.cost <= fair.cost + 1e-6 * abs(fair.cost)
    assert free.M_U >= fair.M_U


def test_sweep_is_a_pareto_front(toy_three):
    rows = toy_three.sweep([0.0, 1.0, 100.0, 1e4, 1e6, math.inf])
    assert all(row.ok for row in rows)
    for a, b in zip(rows, rows[1:]):
        tol = 1e-6 * max(1.0, abs(a.solution.cost))
        assert b.solution.cost >= a.solution.cost - tol
        assert b.solution.M_U <= a.solution.M_U + 1e-9


def test_sweep_rejects_unsorted(toy_two):
    with pytest.raises(ValueError, match="sorted"):
        toy_two.sweep([10.0, 1.0])


def test_sweep_records_failures(toy_one):
    rows = sweep_lambda(toy_one.problem(0.0), [0.0, 1.0])
    assert rows[0].ok
    assert not rows[1].ok
    assert rows[1].error.startswith("DegenerateCandidateSetError")
    frame = pareto_frame(rows)
    assert list(frame["lambda"]) == [0.0, 1.0]
    assert math.isnan(frame["cost_chf"][1])


def test_sweep_paths_agree(toy_two):
    fixed = sweep_lambda(toy_two.problem(0.0), [0.0, 10.0])
    study = toy_two.sweep([0.0, 10.0], refine_passes=1)
    for a, b in zip(fixed, study):
        np.testing.assert_allclose(a.solution.alpha, b.solution.alpha, atol=1e-6)


def test_fairness_price(toy_two):
    rows = toy_two.sweep([0.0, math.inf])
    frame = fairness_price_frame(rows)
    assert frame["price_chf"][0] == 0.0
    assert frame["price_chf"][1] >= -1e-6
    assert math.isnan(fairness_price_frame([ParetoRow(1.0, rows[1].solution)])["price_chf"][0])


def test_alpha_frame(toy_two):
    frame = toy_two.solve(0.0).alpha_frame()
    assert list(frame.columns) == ["node_id", "alpha_kwp", "alpha_per_unit"]
    assert list(frame["node_id"]) == ["N1", "N2"]


def test_roof_cap(toy_equal):
    capped = HostingStudy(toy_equal.grid, TOY_SETTINGS, alpha_max={"N2": 3.0})
    solution = capped.solve(0.0)
    assert solution.alpha[1] == pytest.approx(3.0, abs=1e-6)
    assert "alpha-max:N2" in solution.binding


# Reference network -----------------------------------------------------------

@pytest.fixture(scope="module")
def default_sweep(case_study):
    return case_study.sweep(DEFAULT_LAMBDAS)


def test_case_study_sweep_is_a_pareto_front(default_sweep):
    assert [row.lam for row in default_sweep] == DEFAULT_LAMBDAS
    assert all(row.ok for row in default_sweep)
    for a, b in zip(default_sweep, default_sweep[1:]):
        assert b.solution.M_U <= a.solution.M_U + 1e-9
        assert b.solution.cost >= a.solution.cost - 1e-6 * abs(a.solution.cost)


def test_case_study_fairness_costs_capacity(default_sweep):
    totals = [row.solution.total_kwp for row in default_sweep]
    assert totals[0] >= max(totals) * (1.0 - 1e-6)
    assert totals[0] > 1.5 * totals[-1]


def test_case_study_reallocates_at_moderate_weight(default_sweep):
    by_lambda = {row.lam: row.solution for row in default_sweep}
    assert by_lambda[1e2].M_U < 0.5 * by_lambda[0.0].M_U
    prices = fairness_price_frame(default_sweep)["price_chf"]
    assert prices[0] == 0.0
    assert all(b >= a - 1e-6 * abs(by_lambda[0.0].cost) for a, b in zip(prices, prices[1:]))


def test_case_study_heavy_weight_equalises(default_sweep):
    solution = default_sweep[-1].solution
    assert solution.lam == 1e6
    per_unit = solution.alpha_per_unit
    assert np.ptp(per_unit) <= 1e-4 * np.mean(per_unit)
    assert solution.M_U < 1e-8
    assert len(solution.node_ids) == 19


def test_case_study_perfect_fairness(case_study, default_sweep):
    solution = case_study.solve(math.inf)
    np.testing.assert_allclose(solution.alpha_per_unit, solution.alpha_per_unit[0], rtol=1e-12)
    heavy = default_sweep[-1].solution
    assert heavy.total_kwp == pytest.approx(solution.total_kwp, rel=1e-3)


def test_case_study_certificate(case_study):
    solution = case_study.solve(0.0, refine_passes=3)
    certificate = case_study.verify(solution)
    assert certificate.converged
    assert certificate.within()


def test_linearisations_are_cached(case_study):
    assert case_study.constraints() is case_study.constraints()
