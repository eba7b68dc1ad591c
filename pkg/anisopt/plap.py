"""Regularized anisotropic p-Laplacian with matrix-valued coefficients.

Solves  -div((eps + F_k(|A^(1/2) grad y|^2))^((p-2)/2) A grad y) = f,  y = 0
on the boundary, with P1 elements, and evaluates the a-priori estimates the
regularization is built to satisfy.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, factorized, spsolve

from .config import (
    ARMIJO_C,
    CG_TOLERANCE,
    DEFAULT_DELTA,
    KACANOV_MAX_STEPS,
    MAX_LINE_SEARCH_HALVINGS,
    MAX_OUTER_ITERATIONS,
    STALL_RATIO,
    STATE_TOLERANCE,
    TRANSITION_OVERSHOOT,
)
from .control_set import ControlBounds, ControlField
from .exceptions import ConfigurationError
from .mesh import Mesh, assemble_stiffness, identity_coefficients

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Gauss-Legendre rule used for the energy primitive on the transition band
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)

# the cached factorization is shared by concurrent sweep steps
_SOLVER_LOCK = threading.Lock()


@dataclass(frozen=True, eq=False)
class ProblemParams:
    """Exponent p (2 <= p < inf) and nodal source f."""

    p: float
    f: np.ndarray

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p) and self.p >= 2.0):
            raise ConfigurationError(
                f"problem.p={self.p} violates the constraint 2 ≤ p < ∞"
            )

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def exponent(self) -> float:
        """(p - 2) / 2, the power of the regularized bracket."""
        return 0.5 * (self.p - 2.0)

    @classmethod
    def constant_source(cls, mesh: Mesh, p: float, value: float = 1.0) -> "ProblemParams":
        return cls(p=p, f=np.full(mesh.n_vertices, float(value)))


@dataclass(frozen=True)
class RegParams:
    """Regularization pair (epsilon, k) with truncation slack delta."""

    epsilon: float
    k: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ConfigurationError(f"regularization.epsilon must be > 0, got {self.epsilon}")
        if not self.k >= 1.0:
            raise ConfigurationError(f"regularization.k must be >= 1, got {self.k}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"regularization.delta must lie in (0, 1), got {self.delta}")
        band = np.linspace(0.0, 1.0, 1025)
        overshoot = float(np.max(band**2 - band**3))
        if overshoot > self.delta:
            raise ConfigurationError(
                f"regularization.delta={self.delta} is below the transition overshoot "
                f"{overshoot:.6f} (>= {TRANSITION_OVERSHOOT:.6f} required)"
            )


@dataclass(frozen=True, eq=False)
class StateField:
    """Nodal state y with zero boundary trace."""

    mesh: Mesh
    values: np.ndarray

    @cached_property
    def gradients(self) -> np.ndarray:
        return self.mesh.cell_gradients(self.values)

    @cached_property
    def cell_values(self) -> np.ndarray:
        return self.mesh.cell_values(self.values)

    @property
    def h1_seminorm(self) -> float:
        """(sum_T vol(T) |grad y|_T^2)^(1/2), the discrete H^1_0 norm."""
        return math.sqrt(self.mesh.integrate(np.sum(self.gradients**2, axis=1)))

    def w1p_norm(self, p: float) -> float:
        grad_norm = np.linalg.norm(self.gradients, axis=1)
        return self.mesh.integrate(grad_norm**p) ** (1.0 / p)

    @property
    def l2_norm(self) -> float:
        return math.sqrt(max(float(self.values @ (self.mesh.mass @ self.values)), 0.0))

    def lp_norm(self, p: float) -> float:
        """Midpoint-rule L^p norm of the barycentric values."""
        return self.mesh.integrate(np.abs(self.cell_values) ** p) ** (1.0 / p)

    def difference(self, other: "StateField") -> "StateField":
        return StateField(self.mesh, self.values - other.values)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "StateField":
        return cls(mesh, np.zeros(mesh.n_vertices))


@dataclass
class SolveReport:
    """Outcome of a nonlinear solve."""

    iterations: int
    final_residual: float
    energy_seminorm: float
    converged: bool
    newton_steps: int = 0
    energy_history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "energy_seminorm": self.energy_seminorm,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class AprioriReport:
    """Result of the a-priori estimate checks for one computed state."""

    passed: bool
    margin: float
    chain_passed: bool
    chain_margin: float
    h1_norm: float
    bound: float
    chain_bound: float
    dual_norm_check: str = "skipped"

    def to_dict(self) -> Dict[str, object]:
        return {
            "passed": self.passed,
            "margin": self.margin,
            "chain_passed": self.chain_passed,
            "chain_margin": self.chain_margin,
            "h1_norm": self.h1_norm,
            "bound": self.bound,
            "chain_bound": self.chain_bound,
            "dual_norm_check": self.dual_norm_check,
        }


@dataclass(frozen=True)
class ExceedanceReport:
    """Volumes of the exceedance sets and their Chebyshev-type bounds."""

    gradient_volume: float
    gradient_bound: float
    energy_volume: float
    energy_bound: float
    value_volume: float
    value_bound: float

    @property
    def slack(self) -> float:
        return min(
            self.gradient_bound - self.gradient_volume,
            self.energy_bound - self.energy_volume,
            self.value_bound - self.value_volume,
        )

    def to_dict(self) -> Dict[str, float]:
        return {
            "omega1_volume": self.gradient_volume,
            "omega1_bound": self.gradient_bound,
            "omega_k_volume": self.energy_volume,
            "omega_k_bound": self.energy_bound,
            "omega2_volume": self.value_volume,
            "omega2_bound": self.value_bound,
        }


def _as_array(t: ArrayLike) -> np.ndarray:
    return np.asarray(t, dtype=float)


def _band(t: np.ndarray, reg: RegParams) -> np.ndarray:
    return np.clip(t - reg.k**2, 0.0, 1.0)


def truncation(t: ArrayLike, reg: RegParams) -> ArrayLike:
    """C^1 monotone cutoff F_k.

    Identity on [0, k^2], constant k^2 + 1 beyond k^2 + 1, and on the band in
    between the cubic Hermite interpolant k^2 + s + s^2 - s^3 (s = t - k^2),
    which has slope 1 at the left end and 0 at the right end.

    Raises:
        ValueError: If any t < 0.
    """
    values = _as_array(t)
    if np.any(values < 0.0):
        raise ValueError("truncation F_k is defined for t >= 0 only")
    k2 = reg.k**2
    s = _band(values, reg)
    hermite = k2 + s + s**2 - s**3
    result = np.where(values <= k2, values, np.where(values > k2 + 1.0, k2 + 1.0, hermite))
    return float(result) if result.ndim == 0 else result


def truncation_derivative(t: ArrayLike, reg: RegParams) -> ArrayLike:
    """Derivative of F_k: 1 below k^2, 1 + 2s - 3s^2 on the band, 0 above."""
    values = _as_array(t)
    k2 = reg.k**2
    s = _band(values, reg)
    result = np.where(
        values <= k2, 1.0, np.where(values > k2 + 1.0, 0.0, 1.0 + 2.0 * s - 3.0 * s**2)
    )
    return float(result) if result.ndim == 0 else result


def regularized_coefficient(t: ArrayLike, reg: RegParams, p: float) -> np.ndarray:
    """(eps + F_k(t))^((p-2)/2)."""
    return (reg.epsilon + _as_array(truncation(t, reg))) ** (0.5 * (p - 2.0))


def coefficient_derivative(t: ArrayLike, reg: RegParams, p: float) -> np.ndarray:
    """d/dt of :func:`regularized_coefficient`."""
    r = 0.5 * (p - 2.0)
    if r == 0.0:
        return np.zeros_like(_as_array(t))
    bracket = reg.epsilon + _as_array(truncation(t, reg))
    return r * bracket ** (r - 1.0) * _as_array(truncation_derivative(t, reg))


def _primitive(t: np.ndarray, reg: RegParams, p: float) -> np.ndarray:
    """Phi(t) = 1/2 int_0^t (eps + F_k(s))^((p-2)/2) ds."""
    r = 0.5 * (p - 2.0)
    eps, k2 = reg.epsilon, reg.k**2
    if r == 0.0:
        return 0.5 * t

    def lower(x: np.ndarray) -> np.ndarray:
        return 0.5 * ((eps + x) ** (r + 1.0) - eps ** (r + 1.0)) / (r + 1.0)

    def band_integral(s: np.ndarray) -> np.ndarray:
        nodes = 0.5 * (np.asarray(s)[..., None]) * (_GAUSS_NODES + 1.0)
        integrand = (eps + k2 + nodes + nodes**2 - nodes**3) ** r
        return 0.25 * np.asarray(s) * np.sum(_GAUSS_WEIGHTS * integrand, axis=-1)

    at_k2 = lower(np.asarray(k2))
    full_band = band_integral(np.asarray(1.0))
    s = _band(t, reg)
    upper_tail = 0.5 * np.clip(t - k2 - 1.0, 0.0, None) * (eps + k2 + 1.0) ** r
    return np.where(
        t <= k2,
        lower(np.minimum(t, k2)),
        np.where(t > k2 + 1.0, at_k2 + full_band + upper_tail, at_k2 + band_integral(s)),
    )


def scaled_gradients(y: StateField, control: ControlField) -> np.ndarray:
    """Per-cell S_T grad y with S = A^(1/2)."""
    return np.einsum("tij,tj->ti", control.sqrt, y.gradients)


def _squared_scaled_gradients(y: StateField, control: ControlField) -> np.ndarray:
    return np.sum(scaled_gradients(y, control) ** 2, axis=1)


def assemble_regularized_operator(
    y: StateField,
    control: ControlField,
    reg: RegParams,
    params: ProblemParams,
    mesh: Mesh,
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Frozen-coefficient matrix over the free nodes and the cell coefficients.

    Returns:
        (M, c) with c_T = (eps + F_k(|S_T grad y|^2))^((p-2)/2) and
        M_ij = sum_T c_T (A_T grad phi_j, grad phi_i) vol(T).
    """
    t = _squared_scaled_gradients(y, control)
    coeff = regularized_coefficient(t, reg, params.p)
    matrix = assemble_stiffness(mesh, coeff[:, None, None] * control.matrices)
    return mesh.dofs.restrict(matrix), coeff


def hessian_operator(
    y: StateField,
    control: ControlField,
    reg: RegParams,
    params: ProblemParams,
    mesh: Mesh,
) -> sp.csr_matrix:
    """Second derivative of the energy: c A + 2 c' (A grad y)(A grad y)^T per cell."""
    t = _squared_scaled_gradients(y, control)
    coeff = regularized_coefficient(t, reg, params.p)
    dcoeff = coefficient_derivative(t, reg, params.p)
    flux = np.einsum("tij,tj->ti", control.matrices, y.gradients)
    cell_matrices = coeff[:, None, None] * control.matrices + 2.0 * dcoeff[
        :, None, None
    ] * np.einsum("ti,tj->tij", flux, flux)
    return mesh.dofs.restrict(assemble_stiffness(mesh, cell_matrices))


def load_vector(params: ProblemParams, mesh: Mesh) -> np.ndarray:
    """Free part of the consistent load M f."""
    return (mesh.mass @ params.f)[mesh.dofs.free_vertices]


def energy_seminorm(
    y: StateField, control: ControlField, reg: RegParams, params: ProblemParams
) -> float:
    """||y||_{A,eps,k} = (int (eps + F_k(|S grad y|^2))^((p-2)/2) |S grad y|^2)^(1/p)."""
    t = _squared_scaled_gradients(y, control)
    density = regularized_coefficient(t, reg, params.p) * t
    return y.mesh.integrate(density) ** (1.0 / params.p)


def energy_functional(
    y: StateField,
    control: ControlField,
    reg: RegParams,
    params: ProblemParams,
) -> float:
    """Convex energy whose gradient is the regularized operator minus f."""
    t = _squared_scaled_gradients(y, control)
    stored = y.mesh.integrate(_primitive(t, reg, params.p))
    work = float(y.values @ (y.mesh.mass @ params.f))
    return stored - work


@lru_cache(maxsize=16)
def _laplacian_solver(mesh: Mesh) -> Callable[[np.ndarray], np.ndarray]:
    laplacian = mesh.dofs.restrict(assemble_stiffness(mesh, identity_coefficients(mesh)))
    return factorized(sp.csc_matrix(laplacian))


def dual_norm(residual: np.ndarray, mesh: Mesh) -> float:
    """H^{-1} norm of a free-node residual, (R^T L^{-1} R)^(1/2)."""
    if residual.size == 0:
        return 0.0
    with _SOLVER_LOCK:
        solved = _laplacian_solver(mesh)(residual)
    return math.sqrt(max(float(residual @ solved), 0.0))


def linear_solve(
    matrix: sp.csr_matrix,
    rhs: np.ndarray,
    x0: Optional[np.ndarray] = None,
    rtol: float = CG_TOLERANCE,
) -> np.ndarray:
    """Jacobi-preconditioned CG on an SPD system, direct solve as fallback."""
    if rhs.size == 0:
        return np.zeros(0)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    preconditioner = sp.diags(1.0 / matrix.diagonal())
    solution, info = cg(
        matrix,
        rhs,
        x0=x0,
        rtol=rtol,
        atol=0.0,
        maxiter=20 * rhs.size + 100,
        M=preconditioner,
    )
    if info != 0:
        logger.warning(f"CG did not reach rtol={rtol} (info={info}); using a direct solve")
        solution = spsolve(sp.csc_matrix(matrix), rhs)
    return np.asarray(solution, dtype=float)


def solve_state(
    control: ControlField,
    reg: RegParams,
    params: ProblemParams,
    mesh: Mesh,
    tol: float = STATE_TOLERANCE,
    max_iter: int = MAX_OUTER_ITERATIONS,
    initial: Optional[StateField] = None,
) -> Tuple[StateField, SolveReport]:
    """Solve the regularized boundary value problem.

    Frozen-coefficient (Kacanov) steps are damped by Armijo backtracking on
    the convex energy, so the energy never increases. When the residual
    reduction falls below 1% in a step, or after KACANOV_MAX_STEPS steps,
    the direction switches to damped Newton on the same energy.

    Args:
        control: Admissible control field.
        reg: Regularization parameters.
        params: Exponent and source.
        mesh: The mesh.
        tol: Stop once the H^{-1} residual norm is at most ``tol``.
        max_iter: Maximum number of updates.
        initial: Optional starting state (e.g. the previous sweep step).

    Returns:
        The state and a SolveReport; ``converged`` is False when ``max_iter``
        was exhausted or the line search broke down.
    """
    if tol <= 0.0 or max_iter < 1:
        raise ConfigurationError("solve_state needs tol > 0 and max_iter >= 1")
    dofs = mesh.dofs
    free = dofs.free_vertices
    rhs = load_vector(params, mesh)
    y_free = np.zeros(dofs.n_free) if initial is None else initial.values[free].copy()

    def as_state(values: np.ndarray) -> StateField:
        return StateField(mesh, dofs.extend(values))

    state = as_state(y_free)
    energy = energy_functional(state, control, reg, params)
    history = [energy]
    previous_residual = math.inf
    use_newton = False
    kacanov_steps = 0
    newton_steps = 0
    iterations = 0
    converged = False
    residual_norm = math.inf

    while True:
        matrix, _ = assemble_regularized_operator(state, control, reg, params, mesh)
        residual = rhs - matrix @ y_free
        residual_norm = dual_norm(residual, mesh)
        logger.debug(
            f"state iteration {iterations}: residual={residual_norm:.3e}, energy={energy:.12e}"
        )
        if residual_norm <= tol:
            converged = True
            break
        if iterations >= max_iter:
            break

        if not use_newton and (
            residual_norm > STALL_RATIO * previous_residual
            or kacanov_steps >= KACANOV_MAX_STEPS
        ):
            use_newton = True
            logger.debug(f"switching to damped Newton after {kacanov_steps} Kacanov steps")

        if use_newton:
            hessian = hessian_operator(state, control, reg, params, mesh)
            direction = linear_solve(hessian, residual)
            newton_steps += 1
        else:
            direction = linear_solve(matrix, rhs, x0=y_free) - y_free
            kacanov_steps += 1

        slope = -float(residual @ direction)
        slack = 1e-14 * max(1.0, abs(energy))
        step = 1.0
        accepted = False
        for _ in range(MAX_LINE_SEARCH_HALVINGS):
            trial = y_free + step * direction
            trial_state = as_state(trial)
            trial_energy = energy_functional(trial_state, control, reg, params)
            if trial_energy <= energy + ARMIJO_C * step * min(slope, 0.0) + slack:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            logger.warning(
                f"line search failed at iteration {iterations} (residual {residual_norm:.3e})"
            )
            break

        y_free, state, energy = trial, trial_state, trial_energy
        history.append(energy)
        previous_residual = residual_norm
        iterations += 1

    seminorm = energy_seminorm(state, control, reg, params)
    report = SolveReport(
        iterations=iterations,
        final_residual=residual_norm,
        energy_seminorm=seminorm,
        converged=converged,
        newton_steps=newton_steps,
        energy_history=history,
    )
    if converged:
        logger.info(
            f"State solve converged in {iterations} iterations "
            f"(p={params.p}, eps={reg.epsilon:g}, k={reg.k:g}, residual={residual_norm:.2e})"
        )
    else:
        logger.warning(
            f"State solve did not converge after {iterations} iterations "
            f"(residual {residual_norm:.3e} > {tol:.1e})"
        )
    return state, report


def source_l2_norm(params: ProblemParams, mesh: Mesh) -> float:
    return math.sqrt(max(float(params.f @ (mesh.mass @ params.f)), 0.0))


def _relative_margin(bound: float, value: float) -> float:
    if value == 0.0:
        return math.inf
    return (bound - value) / value


def apriori_check(
    y: StateField,
    report: SolveReport,
    control: ControlField,
    bounds: ControlBounds,
    reg: RegParams,
    params: ProblemParams,
) -> AprioriReport:
    """Check ||y||_H1 <= eps^((2-p)/2) alpha^-2 ||f||_L2 and the seminorm chain.

    The chain is ||y||_H1 <= alpha^-1 (|Omega|^((p-2)/(2p)) ||y||_{A,eps,k}
    + ||y||_{A,eps,k}^(p/2)). Margins are relative, +inf for a zero state.
    The W^{-1,q} form of the estimate has no canonical discrete evaluation
    and is reported as skipped.
    """
    mesh = y.mesh
    p = params.p
    h1 = y.h1_seminorm
    bound = reg.epsilon ** ((2.0 - p) / 2.0) * bounds.alpha**-2 * source_l2_norm(params, mesh)
    seminorm = report.energy_seminorm
    chain_bound = (
        mesh.domain_volume ** ((p - 2.0) / (2.0 * p)) * seminorm + seminorm ** (p / 2.0)
    ) / bounds.alpha
    passed = h1 <= bound + 1e-12
    chain_passed = h1 <= chain_bound + 1e-12
    logger.debug("W^{-1,q} form of the a-priori estimate skipped (no discrete dual norm)")
    return AprioriReport(
        passed=passed,
        margin=_relative_margin(bound, h1),
        chain_passed=chain_passed,
        chain_margin=_relative_margin(chain_bound, h1),
        h1_norm=h1,
        bound=bound,
        chain_bound=chain_bound,
    )


def minty_gap(
    y: StateField,
    control: ControlField,
    params: ProblemParams,
    mesh: Mesh,
    probes: Sequence[StateField],
) -> float:
    """Minimum over probes phi of <A(phi), phi - y> - <f, phi - y>.

    A is the unregularized operator with coefficient |S grad phi|^(p-2).
    """
    if not probes:
        raise ValueError("minty_gap needs at least one probe")
    source = mesh.mass @ params.f
    gaps = []
    for probe in probes:
        scaled = scaled_gradients(probe, control)
        power = np.linalg.norm(scaled, axis=1) ** (params.p - 2.0)
        flux = np.einsum("tij,tj->ti", control.matrices, probe.gradients)
        diff = probe.gradients - y.gradients
        operator_term = mesh.integrate(power * np.sum(flux * diff, axis=1))
        gaps.append(operator_term - float((probe.values - y.values) @ source))
    return float(min(gaps))


def exceedance_volumes(
    y: StateField,
    control: ControlField,
    bounds: ControlBounds,
    reg: RegParams,
    params: ProblemParams,
) -> ExceedanceReport:
    """Measures of the sets where |S grad y| or |y| exceed sqrt(k^2 + 1).

    The gradient set uses a strict inequality and is bounded by
    xi2^p ||y||_{W1p}^p k^-p; the energy variant (non-strict) is bounded by
    ||y||_{A,eps,k}^p k^-p; the value set by ||y||_{Lp}^p k^-p.
    """
    mesh = y.mesh
    p, k = params.p, reg.k
    threshold = reg.k**2 + 1.0
    t = _squared_scaled_gradients(y, control)
    gradient_volume = float(mesh.cell_volume[t > threshold].sum())
    energy_volume = float(mesh.cell_volume[t >= threshold].sum())
    value_volume = float(mesh.cell_volume[y.cell_values**2 > threshold].sum())
    seminorm = energy_seminorm(y, control, reg, params)
    return ExceedanceReport(
        gradient_volume=gradient_volume,
        gradient_bound=bounds.xi2**p * y.w1p_norm(p) ** p * k**-p,
        energy_volume=energy_volume,
        energy_bound=seminorm**p * k**-p,
        value_volume=value_volume,
        value_bound=y.lp_norm(p) ** p * k**-p,
    )


def coercivity_margin(
    y: StateField,
    control: ControlField,
    bounds: ControlBounds,
    reg: RegParams,
    params: ProblemParams,
) -> float:
    """y^T M(y) y - eps^((p-2)/2) alpha^2 ||y||_H1^2 (nonnegative by coercivity)."""
    matrix, _ = assemble_regularized_operator(y, control, reg, params, y.mesh)
    y_free = y.values[y.mesh.dofs.free_vertices]
    quadratic = float(y_free @ (matrix @ y_free))
    return quadratic - reg.epsilon**params.exponent * bounds.alpha**2 * y.h1_seminorm**2


def state_header(dim: int) -> List[str]:
    return ["vertex_id", "x", "value"] if dim == 1 else ["vertex_id", "x", "y", "value"]


def state_rows(y: StateField) -> List[List[float]]:
    """CSV rows: vertex_id, coordinates, value."""
    return [
        [vertex_id, *coords.tolist(), value]
        for vertex_id, (coords, value) in enumerate(zip(y.mesh.vertices, y.values))
    ]
