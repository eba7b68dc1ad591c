"""Matrix-valued controls and the admissible control class.

A control is a cellwise symmetric positive-definite matrix field A with its
cellwise square root S = A^(1/2). Admissibility means the spectrum of every
A_T lies in [xi1^2, xi2^2] and the discrete total variation of S stays within
the budget gamma.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import SPECTRAL_TOLERANCE, TV_TOLERANCE
from .exceptions import ConfigurationError
from .mesh import Mesh

logger = logging.getLogger(__name__)

SCHEME_LENGTHS: Dict[str, int] = {
    "constant-diagonal": 2,
    "constant-rotated": 3,
    "two-block": 4,
}

NAMED_CONTROLS = ("identity", "rotated-anisotropic", "two-block")


@dataclass(frozen=True)
class ControlBounds:
    """Spectral bounds xi1 <= xi2, uniform ellipticity alpha and TV budget gamma."""

    xi1: float
    xi2: float
    alpha: float
    gamma: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= self.xi1 <= self.xi2):
            raise ConfigurationError(
                "control bounds must satisfy 0 < alpha <= xi1 <= xi2, got "
                f"alpha={self.alpha}, xi1={self.xi1}, xi2={self.xi2}"
            )
        if not self.gamma > 0.0:
            raise ConfigurationError(f"bounds.gamma must be positive, got {self.gamma}")

    @property
    def lower(self) -> float:
        return self.xi1**2

    @property
    def upper(self) -> float:
        return self.xi2**2


@dataclass(frozen=True, eq=False)
class ControlField:
    """Per-cell symmetric matrices A_T with cached square roots S_T."""

    matrices: np.ndarray
    sqrt: np.ndarray

    @classmethod
    def from_matrices(cls, matrices: np.ndarray) -> "ControlField":
        matrices = np.asarray(matrices, dtype=float)
        return cls(matrices=matrices, sqrt=matrix_sqrt(matrices))

    @property
    def n_cells(self) -> int:
        return int(self.matrices.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrices.shape[1])

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrices)

    def is_admissible(self, bounds: ControlBounds, tol: float = 1e-10) -> bool:
        """Check symmetry, spectral bounds and the square-root cache."""
        asym = np.abs(self.matrices - np.swapaxes(self.matrices, 1, 2)).max()
        eigs = self.eigenvalues()
        root_err = np.abs(self.sqrt @ self.sqrt - self.matrices).max()
        return bool(
            asym <= 1e-14
            and eigs.min() >= bounds.lower - tol
            and eigs.max() <= bounds.upper + tol
            and root_err <= tol
        )


@dataclass(frozen=True)
class TvReport:
    """Discrete total variation of S = A^(1/2) and its budget status."""

    tv_value: float
    within_budget: bool
    gamma: float = math.inf

    def to_dict(self) -> Dict[str, float]:
        return {
            "tv_value": self.tv_value,
            "within_budget": self.within_budget,
            "gamma": self.gamma,
        }


def matrix_sqrt(matrices: np.ndarray) -> np.ndarray:
    """Symmetric square roots of a stack of symmetric matrices."""
    eigvals, eigvecs = np.linalg.eigh(matrices)
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    return np.einsum("tij,tj,tkj->tik", eigvecs, roots, eigvecs)


def discrete_tv(
    field: ControlField, mesh: Mesh, bounds: Optional[ControlBounds] = None
) -> TvReport:
    """Sum over interior facets of facet measure times the Frobenius jump of S.

    Args:
        field: Control field on ``mesh``.
        mesh: The mesh providing interior facets.
        bounds: Optional bounds supplying the budget gamma.

    Returns:
        TvReport; without bounds the budget is infinite.
    """
    gamma = bounds.gamma if bounds is not None else math.inf
    if mesh.interior_edges.size == 0:
        return TvReport(tv_value=0.0, within_budget=True, gamma=gamma)
    left = field.sqrt[mesh.interior_edges[:, 0]]
    right = field.sqrt[mesh.interior_edges[:, 1]]
    jumps = np.linalg.norm(left - right, axis=(1, 2))
    tv_value = float(np.dot(mesh.facet_measure, jumps))
    return TvReport(
        tv_value=tv_value,
        within_budget=tv_value <= gamma + TV_TOLERANCE,
        gamma=gamma,
    )


def project_to_admissible(field: ControlField, bounds: ControlBounds) -> ControlField:
    """Clip the spectrum of every cell matrix into [xi1^2, xi2^2].

    Cells whose spectrum is already admissible are returned bit-for-bit, so
    the projection is idempotent. Non-symmetric input is symmetrized first
    and a warning is logged.
    """
    matrices = np.array(field.matrices, dtype=float, copy=True)
    transposed = np.swapaxes(matrices, 1, 2)
    if np.abs(matrices - transposed).max() > 0.0:
        logger.warning("Control field is not symmetric; symmetrizing (A + A^T) / 2")
        matrices = 0.5 * (matrices + transposed)

    eigvals, eigvecs = np.linalg.eigh(matrices)
    lo, hi = bounds.lower, bounds.upper
    scale = max(hi, 1.0) * SPECTRAL_TOLERANCE
    outside = ((eigvals < lo - scale) | (eigvals > hi + scale)).any(axis=1)
    if outside.any():
        clipped = np.clip(eigvals[outside], lo, hi)
        vecs = eigvecs[outside]
        rebuilt = np.einsum("tij,tj,tkj->tik", vecs, clipped, vecs)
        matrices[outside] = 0.5 * (rebuilt + np.swapaxes(rebuilt, 1, 2))
        logger.debug(f"Clipped spectrum on {int(outside.sum())} cells")
    return ControlField.from_matrices(matrices)


def spectral_margin(field: ControlField, bounds: ControlBounds, n_directions: int = 64) -> float:
    """Smallest slack of xi1^2 <= eta^T A eta <= xi2^2 over sampled unit vectors."""
    if field.dim == 1:
        directions = np.array([[1.0], [-1.0]])
    else:
        angles = 2.0 * np.pi * np.arange(n_directions) / n_directions
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
    quad = np.einsum("si,tij,sj->ts", directions, field.matrices, directions)
    return float(min((quad - bounds.lower).min(), (bounds.upper - quad).min()))


def norm_equivalence_margin(field: ControlField) -> float:
    """Smallest slack of ||S||_2 <= ||S||_F <= sqrt(dim) ||S||_2 over cells."""
    spectral = np.abs(np.linalg.eigvalsh(field.sqrt)).max(axis=1)
    frobenius = np.linalg.norm(field.sqrt, axis=(1, 2))
    return float(
        min(
            (frobenius - spectral).min(),
            (math.sqrt(field.dim) * spectral - frobenius).min(),
        )
    )


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _check_scheme(theta: Sequence[float], scheme: str) -> np.ndarray:
    if scheme not in SCHEME_LENGTHS:
        raise ConfigurationError(
            f"unknown control scheme '{scheme}'; expected one of {sorted(SCHEME_LENGTHS)}"
        )
    values = np.asarray(theta, dtype=float).ravel()
    if values.size != SCHEME_LENGTHS[scheme]:
        raise ConfigurationError(
            f"scheme '{scheme}' takes {SCHEME_LENGTHS[scheme]} parameters, got {values.size}"
        )
    return values


def clip_theta(theta: Sequence[float], scheme: str, bounds: ControlBounds) -> np.ndarray:
    """Clip the eigenvalue parameters of ``theta`` into [xi1^2, xi2^2]."""
    values = _check_scheme(theta, scheme).copy()
    if scheme == "constant-rotated":
        values[:2] = np.clip(values[:2], bounds.lower, bounds.upper)
    else:
        values = np.clip(values, bounds.lower, bounds.upper)
    return values


def _block(diagonal: np.ndarray, dim: int, angle: float = 0.0) -> np.ndarray:
    if dim == 1:
        return np.array([[diagonal[0]]])
    rot = _rotation(angle)
    block = rot @ np.diag(diagonal) @ rot.T
    return 0.5 * (block + block.T)


def parameterize(
    theta: Sequence[float], scheme: str, mesh: Mesh, bounds: ControlBounds
) -> ControlField:
    """Build a control field from a low-dimensional parameter vector.

    Args:
        theta: Parameters; length 2 (constant-diagonal), 3 (constant-rotated,
            last entry is the rotation angle) or 4 (two-block, left diagonal
            then right diagonal). In 1D only the leading entry of each
            diagonal is used.
        scheme: Scheme identifier.
        mesh: Target mesh.
        bounds: Spectral bounds used for clipping.

    Returns:
        An admissible control field.

    Raises:
        ConfigurationError: On unknown scheme or wrong parameter count.
    """
    values = clip_theta(theta, scheme, bounds)
    dim = mesh.dim
    matrices = np.empty((mesh.n_cells, dim, dim))
    if scheme == "constant-diagonal":
        matrices[:] = _block(values[:2], dim)
    elif scheme == "constant-rotated":
        matrices[:] = _block(values[:2], dim, angle=float(values[2]))
    else:
        left = mesh.barycenters[:, 0] < 0.5
        matrices[left] = _block(values[:2], dim)
        matrices[~left] = _block(values[2:], dim)
    return ControlField.from_matrices(matrices)


def named_control(name: str, mesh: Mesh, bounds: ControlBounds) -> ControlField:
    """Control fixtures: identity, rotated-anisotropic and two-block."""
    lo, hi = bounds.lower, bounds.upper
    if name == "identity":
        return parameterize([1.0, 1.0], "constant-diagonal", mesh, bounds)
    if name == "rotated-anisotropic":
        return parameterize([lo, hi, math.pi / 6.0], "constant-rotated", mesh, bounds)
    if name == "two-block":
        return parameterize([lo, lo, hi, hi], "two-block", mesh, bounds)
    raise ConfigurationError(
        f"unknown control '{name}'; expected one of {list(NAMED_CONTROLS)}"
    )


def control_rows(field: ControlField) -> List[List[float]]:
    """CSV rows: cell_id, a11[, a12, a22]."""
    rows: List[List[float]] = []
    for cell_id, matrix in enumerate(field.matrices):
        if field.dim == 1:
            rows.append([cell_id, matrix[0, 0]])
        else:
            rows.append([cell_id, matrix[0, 0], matrix[0, 1], matrix[1, 1]])
    return rows


def control_header(dim: int) -> List[str]:
    return ["cell_id", "a11"] if dim == 1 else ["cell_id", "a11", "a12", "a22"]


def control_from_rows(rows: Sequence[Sequence[float]], dim: int) -> ControlField:
    """Inverse of :func:`control_rows`; rows must be ordered by cell_id."""
    matrices = np.empty((len(rows), dim, dim))
    for row in rows:
        cell_id = int(row[0])
        if dim == 1:
            matrices[cell_id] = [[float(row[1])]]
        else:
            a11, a12, a22 = (float(v) for v in row[1:4])
            matrices[cell_id] = [[a11, a12], [a12, a22]]
    return ControlField.from_matrices(matrices)
