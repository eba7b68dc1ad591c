"""Dispatch a validated RunConfig to the solvers and persist the results."""

import hashlib
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .control_set import (
    ControlField,
    control_header,
    control_rows,
    discrete_tv,
    named_control,
    norm_equivalence_margin,
    parameterize,
    project_to_admissible,
    spectral_margin,
)
from .conv_lab import default_schedule, run_coupled_sweep, run_state_sweep, run_value_convergence
from .exceptions import ConfigurationError, SolverError
from .hammerstein import (
    Kernel,
    kernel_for_mesh,
    l2_bound_margin,
    solve_hammerstein,
    uniqueness_probe,
    zstate_header,
    zstate_rows,
)
from .inequality_oracle import PropertyCase, battery_passed, run_default_battery
from .mesh import Mesh, build_mesh
from .ocp import OcpInstance, minimize, self_target_instance, trace_header
from .plap import (
    ProblemParams,
    StateField,
    apriori_check,
    coercivity_margin,
    exceedance_volumes,
    solve_state,
    state_header,
    state_rows,
)
from .result_store import ResultStore, load_control_csv
from .run_config import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    """What a run did, what it wrote and whether its checks held."""

    subcommand: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    wall_time: float = 0.0
    reports: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    finished_at: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "reports": self.reports,
            "checks": self.checks,
            "passed": self.passed,
            "outputs": self.outputs,
            "finished_at": self.finished_at,
        }


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(config.canonical_json().encode("utf-8")).hexdigest()


def _problem(config: RunConfig) -> Tuple[Mesh, ProblemParams]:
    mesh = build_mesh(config.mesh.dim, config.mesh.n)
    return mesh, ProblemParams.constant_source(mesh, config.problem.p, config.problem.f)


def _control(config: RunConfig, mesh: Mesh) -> ControlField:
    control = config.control
    if control.file:
        loaded = load_control_csv(Path(control.file), mesh.dim)
        if loaded.n_cells != mesh.n_cells:
            raise ConfigurationError(
                f"control file {control.file} has {loaded.n_cells} cells, mesh has {mesh.n_cells}"
            )
        if not loaded.is_admissible(config.bounds):
            raise ConfigurationError(f"control file {control.file} is not admissible")
        return loaded
    if control.name:
        return named_control(control.name, mesh, config.bounds)
    return parameterize(control.theta, control.scheme, mesh, config.bounds)


def _kernel(config: RunConfig, mesh: Mesh) -> Kernel:
    kernel = config.kernel
    return kernel_for_mesh(mesh, kernel.id, c=kernel.c, sigma=kernel.sigma, p=config.problem.p)


def _solve_state(
    config: RunConfig, store: ResultStore, manifest: RunManifest
) -> Tuple[Mesh, ProblemParams, ControlField, StateField]:
    mesh, params = _problem(config)
    control = _control(config, mesh)
    reg = config.regularization
    state, report = solve_state(
        control, reg, params, mesh, tol=config.solver.tol, max_iter=config.solver.max_iter
    )
    apriori = apriori_check(state, report, control, config.bounds, reg, params)
    measures = exceedance_volumes(state, control, config.bounds, reg, params)
    spectral = spectral_margin(control, config.bounds)
    equivalence = norm_equivalence_margin(control)

    store.write_csv("state.csv", state_header(mesh.dim), state_rows(state))
    store.write_csv("control.csv", control_header(mesh.dim), control_rows(control))
    manifest.reports["state"] = {
        **report.to_dict(),
        "apriori": apriori.to_dict(),
        "exceedance": measures.to_dict(),
        "tv": discrete_tv(control, mesh, config.bounds).to_dict(),
        "coercivity_margin": coercivity_margin(state, control, config.bounds, reg, params),
        "spectral_margin": spectral,
        "norm_equivalence_margin": equivalence,
    }
    manifest.checks.update(
        {
            "state_converged": report.converged,
            "apriori_bound": apriori.passed,
            "seminorm_chain": apriori.chain_passed,
            "measure_estimates": measures.slack >= 0.0,
            "control_spectral_bounds": spectral >= -1e-10,
            "control_norm_equivalence": equivalence >= -1e-10,
        }
    )
    return mesh, params, control, state


def _solve_hammerstein(config: RunConfig, store: ResultStore, manifest: RunManifest) -> None:
    mesh, params, _, state = _solve_state(config, store, manifest)
    kernel = _kernel(config, mesh)
    zstate, report = solve_hammerstein(
        state, kernel, params.p, config.regularization, tol=config.solver.hammerstein_tol
    )
    store.write_csv("z.csv", zstate_header(mesh.dim), zstate_rows(zstate))
    manifest.reports["hammerstein"] = {
        **report.to_dict(),
        "kernel": kernel.to_dict(params.p),
        "z_l2_norm": zstate.l2_norm,
        "l2_bound_margin": l2_bound_margin(zstate, state),
        "uniqueness_spread": uniqueness_probe(
            state, kernel, params.p, config.regularization, seed=config.seed
        ),
    }
    manifest.checks.update(
        {
            "hammerstein_converged": report.converged,
            "kernel_positive": kernel.positivity_margin() >= -1e-10,
        }
    )


def _optimize(config: RunConfig, store: ResultStore, manifest: RunManifest) -> None:
    mesh, params = _problem(config)
    opt = config.optimize
    scheme = config.control.scheme
    instance = OcpInstance(
        mesh=mesh,
        params=params,
        bounds=config.bounds,
        kernel=_kernel(config, mesh),
        z_d=np.full(mesh.n_cells, opt.target),
        reg=config.regularization if opt.regularized else None,
        control_scheme=scheme,
        tv_penalty_weight=opt.tv_penalty_weight,
    )
    if opt.target_theta:
        instance = self_target_instance(instance, opt.target_theta)
    theta0 = opt.theta0 or config.control.theta
    result = minimize(instance, theta0, method=opt.method, budget=opt.budget)

    n_params = len(result.theta_opt)
    store.write_csv("trace.csv", trace_header(n_params), [r.to_row() for r in result.trace])
    store.write_csv("control.csv", control_header(mesh.dim), control_rows(result.control))
    store.write_csv("state.csv", state_header(mesh.dim), state_rows(result.state))
    store.write_csv("z.csv", zstate_header(mesh.dim), zstate_rows(result.zstate))
    store.write_json("ocp_result.json", result.to_dict())

    projected = project_to_admissible(result.control, config.bounds)
    best = result.best_so_far
    manifest.reports["optimize"] = result.to_dict()
    manifest.checks.update(
        {
            "control_admissible": bool(np.array_equal(projected.matrices, result.control.matrices)),
            "tv_within_budget": result.tv_report.within_budget,
            "best_so_far_monotone": all(b <= a for a, b in zip(best, best[1:])),
        }
    )

    if opt.value_convergence:
        schedule = config.schedule or default_schedule()
        table = run_value_convergence(
            instance, schedule, theta0, method=opt.method, budget=opt.budget,
            target_theta=opt.target_theta or None,
        )
        store.write_csv("values.csv", table.header(), table.to_rows())
        manifest.reports["value_convergence"] = table.to_dict()
        manifest.checks.update({f"value_{k}": v for k, v in table.checks.items()})


def _sweep(config: RunConfig, store: ResultStore, manifest: RunManifest) -> None:
    mesh, params = _problem(config)
    control = _control(config, mesh)
    try:
        if config.kernel is not None:
            sweep = run_coupled_sweep(
                control, config.schedule, params, _kernel(config, mesh), mesh, config.bounds,
                tol=config.solver.tol, seed=config.seed,
            )
        else:
            sweep = run_state_sweep(
                control, config.schedule, params, mesh, config.bounds,
                tol=config.solver.tol, seed=config.seed,
            )
    except SolverError as e:
        if e.partial is not None:
            store.write_json("sweep.json", e.partial.to_dict())
            store.write_csv("sweep.csv", e.partial.header(), e.partial.to_rows())
        raise
    store.write_json("sweep.json", sweep.to_dict())
    store.write_csv("sweep.csv", sweep.header(), sweep.to_rows())
    manifest.reports["sweep"] = {
        "kind": sweep.kind,
        "steps": len(sweep.steps),
        "reference": sweep.reference,
        "diagnostics": sweep.diagnostics,
    }
    manifest.checks.update(sweep.checks)


def _check_inequalities(config: RunConfig, store: ResultStore, manifest: RunManifest) -> None:
    cases = run_default_battery(seed=config.seed, samples=config.samples)
    store.write_csv("inequalities.csv", PropertyCase.header(), [case.to_row() for case in cases])
    manifest.reports["inequalities"] = [case.to_dict() for case in cases]
    manifest.checks["inequality_battery"] = battery_passed(cases)


DISPATCH: Dict[str, Callable[[RunConfig, ResultStore, RunManifest], Any]] = {
    "solve-state": _solve_state,
    "solve-hammerstein": _solve_hammerstein,
    "optimize": _optimize,
    "sweep": _sweep,
    "check-inequalities": _check_inequalities,
}


def run(config: RunConfig, store: Optional[ResultStore] = None) -> RunManifest:
    """Execute ``config`` and write its artifacts plus ``manifest.json``.

    Args:
        config: Validated configuration.
        store: Target store; defaults to one on ``config.output_dir``.

    Returns:
        The manifest; ``passed`` is True iff every recorded check held.
    """
    store = store or ResultStore(config.output_dir)
    manifest = RunManifest(
        subcommand=config.subcommand,
        config=config.raw,
        config_hash=config_hash(config),
        seed=config.seed,
    )
    started = time.perf_counter()
    logger.info(f"Running {config.subcommand} into {store.output_dir}")
    DISPATCH[config.subcommand](config, store, manifest)
    manifest.wall_time = time.perf_counter() - started
    manifest.finished_at = datetime.now().isoformat()
    store.write_manifest(manifest.to_dict())
    manifest.outputs = list(store.written)
    if manifest.passed:
        logger.info(f"{config.subcommand} finished in {manifest.wall_time:.2f}s, all checks passed")
    else:
        failed = [name for name, ok in manifest.checks.items() if not ok]
        logger.warning(f"{config.subcommand} finished with failed checks: {', '.join(failed)}")
    return manifest
