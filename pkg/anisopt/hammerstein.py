"""Hammerstein equation z + B F(y, z) = g with an integral operator B.

B is discretized by the midpoint rule on the cell barycenters,
(B u)_i = sum_j K(x_i, x_j) u_j w_j, and the equation is solved by Newton's
method with step halving.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .config import (
    DEFAULT_KERNEL_SIGMA,
    HAMMERSTEIN_MAX_ITERATIONS,
    HAMMERSTEIN_TOLERANCE,
    KERNEL_CONDITION_TARGET,
    MAX_LINE_SEARCH_HALVINGS,
)
from .exceptions import ConfigurationError, SolverError
from .mesh import Mesh, quadrature_points
from .plap import (
    RegParams,
    SolveReport,
    StateField,
    coefficient_derivative,
    regularized_coefficient,
)

logger = logging.getLogger(__name__)

KERNEL_IDS = ("gaussian", "separable-rank1", "zero")


@dataclass(frozen=True, eq=False)
class Kernel:
    """Assembled kernel matrix K_h with entries K(x_i, x_j) w_j."""

    kernel_id: str
    c: float
    sigma: Optional[float]
    points: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return int(self.weights.size)

    def kernel_values(self) -> np.ndarray:
        """K(x_i, x_j) without the quadrature weights."""
        return self.matrix / self.weights[None, :]

    def condition_value(self, p: float) -> float:
        """sum_i sum_j w_i w_j |K(x_i, x_j)|^p, the discrete constant C_1."""
        values = np.abs(self.kernel_values()) ** p
        return float(self.weights @ values @ self.weights)

    def positivity_margin(self) -> float:
        """Smallest eigenvalue of the symmetric part of K_h."""
        symmetric = 0.5 * (self.matrix + self.matrix.T)
        return float(np.linalg.eigvalsh(symmetric).min())

    def to_dict(self, p: float) -> Dict[str, object]:
        return {
            "kernel_id": self.kernel_id,
            "c": self.c,
            "sigma": self.sigma,
            "condition_C1": self.condition_value(p),
            "positivity_margin": self.positivity_margin(),
        }


@dataclass(frozen=True, eq=False)
class HammersteinState:
    """Per-cell values of z with the quadrature it lives on."""

    values: np.ndarray
    points: np.ndarray
    weights: np.ndarray

    @property
    def l2_norm(self) -> float:
        return math.sqrt(float(self.weights @ self.values**2))

    def lp_norm(self, p: float) -> float:
        return float(self.weights @ np.abs(self.values) ** p) ** (1.0 / p)

    def distance(self, other: "HammersteinState", p: float) -> float:
        return float(self.weights @ np.abs(self.values - other.values) ** p) ** (1.0 / p)


def build_kernel(
    kernel_id: str,
    points: np.ndarray,
    weights: np.ndarray,
    c: Optional[float] = None,
    sigma: float = DEFAULT_KERNEL_SIGMA,
    p: float = 2.0,
) -> Kernel:
    """Assemble a kernel on arbitrary quadrature points.

    Args:
        kernel_id: ``gaussian``, ``separable-rank1`` or ``zero``.
        points: Quadrature points, shape (n, dim).
        weights: Positive quadrature weights, shape (n,).
        c: Kernel scale. For the gaussian kernel ``None`` selects the scale
            with sum_ij w_i w_j K^p = 1; for the constant kernel it means 1.
        sigma: Gaussian width.
        p: Exponent used for the gaussian normalization.

    Raises:
        ConfigurationError: On an unknown kernel id or invalid parameters.
    """
    points = np.asarray(points, dtype=float).reshape(len(weights), -1)
    weights = np.asarray(weights, dtype=float)
    if kernel_id not in KERNEL_IDS:
        raise ConfigurationError(
            f"unknown kernel '{kernel_id}'; expected one of {list(KERNEL_IDS)}"
        )
    if np.any(weights <= 0.0):
        raise ConfigurationError("kernel quadrature weights must be positive")
    if c is not None and c < 0.0:
        raise ConfigurationError(f"kernel.c must be >= 0, got {c}")

    n = weights.size
    if kernel_id == "zero":
        return Kernel(kernel_id, 0.0, None, points, weights, np.zeros((n, n)))
    if kernel_id == "separable-rank1":
        scale = 1.0 if c is None else float(c)
        values = np.full((n, n), scale)
        return Kernel(kernel_id, scale, None, points, weights, values * weights[None, :])

    if not sigma > 0.0:
        raise ConfigurationError(f"kernel.sigma must be > 0, got {sigma}")
    squared = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    shape = np.exp(-squared / sigma**2)
    if c is None:
        total = float(weights @ shape**p @ weights)
        scale = (KERNEL_CONDITION_TARGET / total) ** (1.0 / p)
    else:
        scale = float(c)
    logger.debug(f"gaussian kernel: n={n}, sigma={sigma}, c={scale:.6g}")
    return Kernel(kernel_id, scale, float(sigma), points, weights, scale * shape * weights[None, :])


def kernel_for_mesh(
    mesh: Mesh,
    kernel_id: str,
    c: Optional[float] = None,
    sigma: float = DEFAULT_KERNEL_SIGMA,
    p: float = 2.0,
) -> Kernel:
    """Kernel on the barycentric quadrature of ``mesh``."""
    points, weights = quadrature_points(mesh)
    return build_kernel(kernel_id, points, weights, c=c, sigma=sigma, p=p)


def apply_B(kernel: Kernel, u: np.ndarray) -> np.ndarray:
    """(B u)_i = sum_j K(x_i, x_j) u_j w_j."""
    return kernel.matrix @ np.asarray(u, dtype=float)


def _signed_power(x: np.ndarray, p: float) -> np.ndarray:
    return np.abs(x) ** (p - 2.0) * x


def nonlinearity_F(y: np.ndarray, z: np.ndarray, p: float) -> np.ndarray:
    """|y|^(p-2) y + |z|^(p-2) z."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return _signed_power(y, p) + _signed_power(z, p)


def nonlinearity_F_reg(y: np.ndarray, z: np.ndarray, reg: RegParams, p: float) -> np.ndarray:
    """[eps + F_k(y^2)]^((p-2)/2) y + [eps + F_k(z^2)]^((p-2)/2) z."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return regularized_coefficient(y**2, reg, p) * y + regularized_coefficient(z**2, reg, p) * z


def nonlinearity_dz(z: np.ndarray, p: float, reg: Optional[RegParams] = None) -> np.ndarray:
    """Partial derivative of F (or F_{eps,k}) with respect to z, always >= 0."""
    z = np.asarray(z, dtype=float)
    if reg is None:
        return (p - 1.0) * np.abs(z) ** (p - 2.0)
    t = z**2
    return regularized_coefficient(t, reg, p) + 2.0 * t * coefficient_derivative(t, reg, p)


def _evaluate_F(y: np.ndarray, z: np.ndarray, p: float, reg: Optional[RegParams]) -> np.ndarray:
    if reg is None:
        return nonlinearity_F(y, z, p)
    return nonlinearity_F_reg(y, z, reg, p)


def _cell_values(y: Union[StateField, np.ndarray]) -> np.ndarray:
    if isinstance(y, StateField):
        return y.cell_values
    return np.asarray(y, dtype=float)


def solve_hammerstein(
    y: Union[StateField, np.ndarray],
    kernel: Kernel,
    p: float,
    reg: Optional[RegParams] = None,
    tol: float = HAMMERSTEIN_TOLERANCE,
    max_iter: int = HAMMERSTEIN_MAX_ITERATIONS,
    initial: Optional[np.ndarray] = None,
    g: Optional[np.ndarray] = None,
) -> Tuple[HammersteinState, SolveReport]:
    """Solve z + K_h F(y, z) = g by damped Newton iteration.

    The Jacobian is I + K_h diag(dF/dz). Steps are halved until the Euclidean
    residual norm decreases; convergence is declared on the max norm.

    Args:
        y: State, either a StateField (averaged to barycenters) or per-cell values.
        kernel: Assembled kernel on the same cells.
        p: Exponent.
        reg: Regularization; ``None`` selects the power nonlinearity.
        tol: Max-norm residual tolerance.
        max_iter: Maximum number of Newton updates.
        initial: Optional starting iterate (default 0).
        g: Optional right-hand side (default 0).

    Returns:
        The solution and a SolveReport whose ``energy_seminorm`` holds ||z||_Lp.

    Raises:
        SolverError: If the Jacobian is singular.
    """
    y_cells = _cell_values(y)
    if y_cells.shape != kernel.weights.shape:
        raise ConfigurationError(
            f"state has {y_cells.size} cell values but the kernel has {kernel.size} points"
        )
    rhs = np.zeros_like(y_cells) if g is None else np.asarray(g, dtype=float)
    z = np.zeros_like(y_cells) if initial is None else np.array(initial, dtype=float)
    identity = np.eye(kernel.size)

    def residual(values: np.ndarray) -> np.ndarray:
        return values + kernel.matrix @ _evaluate_F(y_cells, values, p, reg) - rhs

    current = residual(z)
    iterations = 0
    converged = False
    while True:
        residual_norm = float(np.abs(current).max()) if current.size else 0.0
        logger.debug(f"hammerstein iteration {iterations}: residual={residual_norm:.3e}")
        if residual_norm <= tol:
            converged = True
            break
        if iterations >= max_iter:
            break

        jacobian = identity + kernel.matrix * nonlinearity_dz(z, p, reg)[None, :]
        try:
            step = np.linalg.solve(jacobian, -current)
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                f"singular Hammerstein Jacobian at iteration {iterations}",
                partial=HammersteinState(z, kernel.points, kernel.weights),
            ) from exc

        norm = float(np.linalg.norm(current))
        scale = 1.0
        accepted = False
        for _ in range(MAX_LINE_SEARCH_HALVINGS):
            trial = z + scale * step
            trial_residual = residual(trial)
            if float(np.linalg.norm(trial_residual)) < norm:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            logger.warning(
                f"Hammerstein line search stalled at residual {residual_norm:.3e}"
            )
            break
        z, current = trial, trial_residual
        iterations += 1

    state = HammersteinState(z, kernel.points, kernel.weights)
    report = SolveReport(
        iterations=iterations,
        final_residual=residual_norm,
        energy_seminorm=state.lp_norm(p),
        converged=converged,
        newton_steps=iterations,
    )
    if not converged:
        logger.warning(
            f"Hammerstein solve did not converge after {iterations} iterations "
            f"(residual {residual_norm:.3e} > {tol:.1e})"
        )
    return state, report


def uniqueness_probe(
    y: Union[StateField, np.ndarray],
    kernel: Kernel,
    p: float,
    reg: Optional[RegParams] = None,
    n_starts: int = 5,
    seed: int = 0,
    tol: float = HAMMERSTEIN_TOLERANCE,
) -> float:
    """Max pairwise L^p distance between solutions from random starts.

    Raises:
        ValueError: If ``n_starts < 2``.
        SolverError: If any start fails to converge.
    """
    if n_starts < 2:
        raise ValueError("uniqueness_probe needs n_starts >= 2")
    y_cells = _cell_values(y)
    rng = np.random.default_rng(seed)
    radius = 2.0 * (1.0 + float(np.abs(y_cells).max(initial=0.0)))
    solutions: List[HammersteinState] = []
    for start in range(n_starts):
        initial = rng.uniform(-radius, radius, size=y_cells.shape)
        state, report = solve_hammerstein(y_cells, kernel, p, reg, tol=tol, initial=initial)
        if not report.converged:
            raise SolverError(f"uniqueness probe start {start} did not converge", partial=state)
        solutions.append(state)
    return max(
        a.distance(b, p) for i, a in enumerate(solutions) for b in solutions[i + 1 :]
    )


def l2_bound_margin(z: HammersteinState, y: Union[StateField, np.ndarray]) -> float:
    """||y||_L2 - ||z||_L2 on the cell quadrature.

    Nonnegative for p = 2 with a symmetric positive kernel matrix; for other
    exponents it is a diagnostic only.
    """
    y_cells = _cell_values(y)
    return math.sqrt(float(z.weights @ y_cells**2)) - z.l2_norm


def value_exceedance(z: HammersteinState, reg: RegParams, p: float) -> Tuple[float, float]:
    """Measure of {|z| > sqrt(k^2 + 1)} and its bound ||z||_Lp^p k^-p."""
    mask = z.values**2 > reg.k**2 + 1.0
    return float(z.weights[mask].sum()), z.lp_norm(p) ** p * reg.k**-p


def zstate_header(dim: int) -> List[str]:
    return ["cell_id", "x", "value"] if dim == 1 else ["cell_id", "x", "y", "value"]


def zstate_rows(z: HammersteinState) -> List[List[float]]:
    """CSV rows: cell_id, barycenter coordinates, value."""
    return [
        [cell_id, *point.tolist(), value]
        for cell_id, (point, value) in enumerate(zip(z.points, z.values))
    ]

