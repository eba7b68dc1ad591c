"""Optimal control in the coefficients: tracking cost and its minimization."""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .config import DEFAULT_BUDGET, DEFAULT_TV_PENALTY, FD_RELATIVE_STEP, MAX_OUTER_ITERATIONS
from .control_set import (
    SCHEME_LENGTHS,
    ControlBounds,
    ControlField,
    TvReport,
    clip_theta,
    discrete_tv,
    parameterize,
)
from .exceptions import ConfigurationError, OptimizationError, SolverError
from .hammerstein import HammersteinState, Kernel, solve_hammerstein
from .mesh import Mesh
from .plap import ProblemParams, RegParams, StateField, solve_state

logger = logging.getLogger(__name__)

METHODS = ("nelder-mead", "fd-projected-gradient")

# Any (eps, k) gives the same operator when p = 2.
_LINEAR_REG = RegParams(epsilon=1.0, k=1.0)


@dataclass(frozen=True, eq=False)
class OcpInstance:
    """Tracking problem: minimize ||z - z_d||^2 over parameterized controls."""

    mesh: Mesh
    params: ProblemParams
    bounds: ControlBounds
    kernel: Kernel
    z_d: np.ndarray
    reg: Optional[RegParams]
    control_scheme: str
    tv_penalty_weight: float = DEFAULT_TV_PENALTY

    def __post_init__(self) -> None:
        if self.control_scheme not in SCHEME_LENGTHS:
            raise ConfigurationError(
                f"unknown control scheme '{self.control_scheme}'; "
                f"expected one of {sorted(SCHEME_LENGTHS)}"
            )
        target = np.asarray(self.z_d, dtype=float)
        if target.shape != (self.mesh.n_cells,) or not np.all(np.isfinite(target)):
            raise ConfigurationError("z_d must be a finite per-cell field")
        if self.reg is None and self.params.p != 2.0:
            raise ConfigurationError("the unregularized problem is only solvable here for p = 2")
        if self.tv_penalty_weight < 0.0:
            raise ConfigurationError("tv_penalty_weight must be nonnegative")

    @property
    def state_reg(self) -> RegParams:
        return self.reg if self.reg is not None else _LINEAR_REG

    def with_target(self, z_d: np.ndarray) -> "OcpInstance":
        return OcpInstance(
            mesh=self.mesh,
            params=self.params,
            bounds=self.bounds,
            kernel=self.kernel,
            z_d=np.asarray(z_d, dtype=float),
            reg=self.reg,
            control_scheme=self.control_scheme,
            tv_penalty_weight=self.tv_penalty_weight,
        )

    def with_reg(self, reg: Optional[RegParams]) -> "OcpInstance":
        return OcpInstance(
            mesh=self.mesh,
            params=self.params,
            bounds=self.bounds,
            kernel=self.kernel,
            z_d=self.z_d,
            reg=reg,
            control_scheme=self.control_scheme,
            tv_penalty_weight=self.tv_penalty_weight,
        )


@dataclass(frozen=True, eq=False)
class CostEvaluation:
    """One evaluation of the cost at a (clipped) parameter vector."""

    theta: np.ndarray
    cost: float
    control: ControlField
    state: StateField
    zstate: HammersteinState
    tv_report: TvReport
    valid: bool


@dataclass(frozen=True)
class EvaluationRecord:
    evaluation_id: int
    theta: Tuple[float, ...]
    cost: float
    tv: float
    valid: bool

    def to_row(self) -> List[object]:
        return [self.evaluation_id, *self.theta, self.cost, self.tv, int(self.valid)]


@dataclass
class OcpResult:
    """Best admissible parameter found and the coupled states it produces."""

    theta_opt: np.ndarray
    cost_opt: float
    state: StateField
    zstate: HammersteinState
    evaluations: int
    tv_report: TvReport
    control: ControlField
    method: str
    trace: List[EvaluationRecord] = field(default_factory=list)
    best_so_far: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "theta_opt": [float(v) for v in self.theta_opt],
            "cost_opt": self.cost_opt,
            "evaluations": self.evaluations,
            "method": self.method,
            "tv_report": self.tv_report.to_dict(),
        }


def trace_header(n_params: int) -> List[str]:
    return ["evaluation_id", *(f"theta_{i}" for i in range(n_params)), "cost", "tv", "valid"]


def evaluate_cost(instance: OcpInstance, theta: Sequence[float]) -> CostEvaluation:
    """Solve the coupled system at A = parameterize(theta) and return the cost.

    The cost is sum_i w_i (z_i - z_d,i)^2 + weight * max(0, TV - gamma)^2.
    A state or Hammerstein solve that does not converge yields an invalid
    evaluation with cost +inf.
    """
    clipped = clip_theta(theta, instance.control_scheme, instance.bounds)
    control = parameterize(clipped, instance.control_scheme, instance.mesh, instance.bounds)
    tv_report = discrete_tv(control, instance.mesh, instance.bounds)
    state, state_report = solve_state(
        control, instance.state_reg, instance.params, instance.mesh, max_iter=MAX_OUTER_ITERATIONS
    )
    zstate, z_report = solve_hammerstein(state, instance.kernel, instance.params.p, instance.reg)
    valid = state_report.converged and z_report.converged
    if valid:
        tracking = float(instance.kernel.weights @ (zstate.values - instance.z_d) ** 2)
        excess = max(0.0, tv_report.tv_value - instance.bounds.gamma)
        cost = tracking + instance.tv_penalty_weight * excess**2
    else:
        logger.warning(f"Invalid evaluation at theta={clipped.tolist()}: inner solve failed")
        cost = math.inf
    return CostEvaluation(clipped, cost, control, state, zstate, tv_report, valid)


class _BudgetExhausted(Exception):
    pass


class _EvaluationLog:
    """Budgeted cost oracle that records every evaluation and the incumbent."""

    def __init__(self, instance: OcpInstance, budget: int) -> None:
        self.instance = instance
        self.budget = budget
        self.records: List[EvaluationRecord] = []
        self.best_so_far: List[float] = []
        self.best: Optional[CostEvaluation] = None

    @property
    def remaining(self) -> int:
        return self.budget - len(self.records)

    def _better(self, candidate: CostEvaluation) -> bool:
        if not (candidate.valid and candidate.tv_report.within_budget):
            return False
        if self.best is None:
            return True
        if candidate.cost != self.best.cost:
            return candidate.cost < self.best.cost
        return tuple(candidate.theta) < tuple(self.best.theta)

    def __call__(self, theta: Sequence[float]) -> float:
        if self.remaining <= 0:
            raise _BudgetExhausted()
        evaluation = evaluate_cost(self.instance, theta)
        self.records.append(
            EvaluationRecord(
                evaluation_id=len(self.records),
                theta=tuple(float(v) for v in evaluation.theta),
                cost=evaluation.cost,
                tv=evaluation.tv_report.tv_value,
                valid=evaluation.valid,
            )
        )
        if self._better(evaluation):
            self.best = evaluation
        self.best_so_far.append(self.best.cost if self.best is not None else math.inf)
        return evaluation.cost

    def result(self, method: str) -> OcpResult:
        if self.best is None:
            raise OptimizationError(
                f"all {len(self.records)} evaluations were invalid or over the TV budget"
            )
        best = self.best
        logger.info(
            f"{method}: best cost {best.cost:.6e} at theta={best.theta.tolist()} "
            f"after {len(self.records)} evaluations"
        )
        return OcpResult(
            theta_opt=best.theta,
            cost_opt=best.cost,
            state=best.state,
            zstate=best.zstate,
            evaluations=len(self.records),
            tv_report=best.tv_report,
            control=best.control,
            method=method,
            trace=list(self.records),
            best_so_far=list(self.best_so_far),
        )


def _run_nelder_mead(log: _EvaluationLog, theta0: np.ndarray) -> None:
    scipy_minimize(
        log,
        theta0,
        method="Nelder-Mead",
        options={"maxfev": log.budget, "xatol": 1e-10, "fatol": 1e-16},
    )


def _finite_difference_gradient(log: _EvaluationLog, theta: np.ndarray) -> np.ndarray:
    gradient = np.zeros_like(theta)
    for i in range(theta.size):
        step = FD_RELATIVE_STEP * max(1.0, abs(theta[i]))
        forward, backward = theta.copy(), theta.copy()
        forward[i] += step
        backward[i] -= step
        gradient[i] = (log(forward) - log(backward)) / (2.0 * step)
    return gradient


def _run_projected_gradient(log: _EvaluationLog, theta0: np.ndarray) -> None:
    scheme, bounds = log.instance.control_scheme, log.instance.bounds
    theta = clip_theta(theta0, scheme, bounds)
    current = log(theta)
    while log.remaining > 0:
        gradient = _finite_difference_gradient(log, theta)
        scale = float(np.abs(gradient).max())
        if not np.isfinite(scale) or scale == 0.0:
            return
        step = 0.5 * max(1.0, float(np.abs(theta).max()))
        direction = -gradient / scale
        while step > 1e-12:
            trial = clip_theta(theta + step * direction, scheme, bounds)
            trial_cost = log(trial)
            if trial_cost < current:
                theta, current = trial, trial_cost
                break
            step *= 0.5
        else:
            return


def minimize(
    instance: OcpInstance,
    theta0: Sequence[float],
    method: str = "nelder-mead",
    budget: int = DEFAULT_BUDGET,
) -> OcpResult:
    """Minimize the cost over the control parameterization.

    Every evaluation counts against ``budget`` and is recorded. The result is
    the best valid evaluation whose TV is within budget, ties going to the
    lexicographically smaller theta. theta0 is always evaluated first, so
    the reported cost never exceeds cost(theta0) when theta0 is feasible.

    Raises:
        ConfigurationError: On an unknown method or ``budget < 10``.
        OptimizationError: If no evaluation was valid and feasible.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method '{method}'; expected one of {list(METHODS)}")
    if budget < 10:
        raise ConfigurationError(f"optimizer budget must be >= 10, got {budget}")
    start = clip_theta(theta0, instance.control_scheme, instance.bounds)
    log = _EvaluationLog(instance, budget)
    runner: Callable[[_EvaluationLog, np.ndarray], None] = (
        _run_nelder_mead if method == "nelder-mead" else _run_projected_gradient
    )
    try:
        log(start)
        runner(log, start)
    except _BudgetExhausted:
        logger.debug(f"{method}: evaluation budget of {budget} exhausted")
    return log.result(method)


def grid_search(instance: OcpInstance, axes: Sequence[Sequence[float]]) -> OcpResult:
    """Evaluate the cost on the tensor grid spanned by ``axes``."""
    points = [np.array(point, dtype=float) for point in itertools.product(*axes)]
    if not points:
        raise ConfigurationError("grid_search needs a non-empty grid")
    log = _EvaluationLog(instance, len(points))
    for point in points:
        log(point)
    return log.result("grid")


def self_target_instance(instance: OcpInstance, theta_star: Sequence[float]) -> OcpInstance:
    """Instance whose target is the Hammerstein state produced by theta_star."""
    evaluation = evaluate_cost(instance, theta_star)
    if not evaluation.valid:
        raise SolverError(f"target solve failed at theta={list(theta_star)}")
    return instance.with_target(evaluation.zstate.values)
