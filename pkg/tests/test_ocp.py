"""Tests for the tracking cost and the control optimizers."""

import numpy as np
import pytest

from anisopt.control_set import ControlBounds
from anisopt.exceptions import ConfigurationError, OptimizationError
from anisopt.hammerstein import kernel_for_mesh
from anisopt.mesh import build_mesh
from anisopt.ocp import (
    OcpInstance,
    evaluate_cost,
    grid_search,
    minimize,
    self_target_instance,
    trace_header,
)
from anisopt.plap import ProblemParams, RegParams

THETA_STAR = (2.0, 1.0)


def _instance(bounds, p=2.0, reg=None, scheme="constant-diagonal", n=16) -> OcpInstance:
    mesh = build_mesh(1, n)
    return OcpInstance(
        mesh=mesh,
        params=ProblemParams.constant_source(mesh, p, value=4.0),
        bounds=bounds,
        kernel=kernel_for_mesh(mesh, "gaussian", p=p),
        z_d=np.zeros(mesh.n_cells),
        reg=reg,
        control_scheme=scheme,
    )


@pytest.fixture
def linear_instance(bounds):
    return self_target_instance(_instance(bounds), THETA_STAR)


def test_instance_validation(bounds):
    with pytest.raises(ConfigurationError, match="p = 2"):
        _instance(bounds, p=3.0, reg=None)
    with pytest.raises(ConfigurationError, match="unknown control scheme"):
        _instance(bounds, scheme="per-cell")
    instance = _instance(bounds)
    with pytest.raises(ConfigurationError, match="z_d"):
        instance.with_target(np.zeros(3))
    with pytest.raises(ConfigurationError):
        _instance(bounds, p=3.0, reg=RegParams(1e-2, 4.0)).with_reg(None)


def test_cost_is_deterministic_and_zero_at_target(linear_instance):
    first = evaluate_cost(linear_instance, THETA_STAR)
    second = evaluate_cost(linear_instance, THETA_STAR)
    assert first.valid
    assert first.cost == 0.0
    assert second.cost == first.cost
    assert evaluate_cost(linear_instance, [1.0, 1.0]).cost > 0.0


def test_cost_penalizes_tv_excess(bounds):
    tight = ControlBounds(bounds.xi1, bounds.xi2, bounds.alpha, gamma=0.1)
    instance = _instance(tight, scheme="two-block")
    evaluation = evaluate_cost(instance, [0.25, 1.0, 4.0, 1.0])
    assert not evaluation.tv_report.within_budget
    excess = evaluation.tv_report.tv_value - 0.1
    assert evaluation.cost >= instance.tv_penalty_weight * excess**2


def test_grid_search_breaks_ties_lexicographically(linear_instance):
    result = grid_search(linear_instance, [[1.0, 2.0, 3.0], [1.0, 0.5]])
    assert result.cost_opt == 0.0
    np.testing.assert_array_equal(result.theta_opt, [2.0, 0.5])
    assert result.evaluations == 6


def test_grid_search_without_feasible_point(bounds):
    tight = ControlBounds(bounds.xi1, bounds.xi2, bounds.alpha, gamma=0.1)
    instance = _instance(tight, scheme="two-block")
    with pytest.raises(OptimizationError):
        grid_search(instance, [[0.25], [1.0], [4.0], [1.0]])


def test_nelder_mead_recovers_self_target(linear_instance):
    result = minimize(linear_instance, [1.0, 1.0], method="nelder-mead", budget=150)
    assert result.theta_opt[0] == pytest.approx(THETA_STAR[0], abs=1e-3)
    assert result.cost_opt <= 1e-6
    assert result.evaluations <= 150
    assert result.evaluations == len(result.trace)


def test_trace_and_incumbent_bookkeeping(linear_instance):
    result = minimize(linear_instance, [1.0, 1.0], budget=30)
    best = result.best_so_far
    assert result.trace[0].theta == (1.0, 1.0)
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert best[-1] == result.cost_opt
    assert result.cost_opt <= result.trace[0].cost
    assert len(result.trace[0].to_row()) == len(trace_header(2))
    assert set(result.to_dict()) == {"theta_opt", "cost_opt", "evaluations", "method", "tv_report"}


def test_projected_gradient_descends(linear_instance):
    start = evaluate_cost(linear_instance, [1.0, 1.0]).cost
    result = minimize(linear_instance, [1.0, 1.0], method="fd-projected-gradient", budget=40)
    assert result.method == "fd-projected-gradient"
    assert result.cost_opt < start
    assert result.evaluations <= 40
    assert np.all(result.theta_opt >= linear_instance.bounds.lower)
    assert np.all(result.theta_opt <= linear_instance.bounds.upper)


def test_out_of_range_start_is_clipped(linear_instance):
    result = minimize(linear_instance, [100.0, 1.0], budget=10)
    assert result.trace[0].theta[0] == linear_instance.bounds.upper


def test_regularized_problem_improves_on_start(bounds):
    instance = self_target_instance(
        _instance(bounds, p=3.0, reg=RegParams(1e-2, 4.0), n=8), THETA_STAR
    )
    result = minimize(instance, [1.0, 1.0], budget=40)
    assert result.cost_opt < result.trace[0].cost
    assert result.state.values.shape == (9,)
    assert result.zstate.values.shape == (8,)


@pytest.mark.parametrize("kwargs", [{"method": "bfgs"}, {"budget": 5}])
def test_minimize_rejects_bad_arguments(linear_instance, kwargs):
    with pytest.raises(ConfigurationError):
        minimize(linear_instance, [1.0, 1.0], **kwargs)
