"""Uniform simplicial meshes of the unit interval and the unit square.

Piecewise-linear nodal basis with elementwise-constant gradients, Dirichlet
boundary bookkeeping and one-point (barycentric) quadrature.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Map between all vertices and the free (interior) unknowns."""

    n_total: int
    n_free: int
    free_index: np.ndarray  # slot per vertex, -1 on the boundary

    @property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.free_index >= 0)

    def restrict(self, matrix: sp.spmatrix) -> sp.csr_matrix:
        """Restrict a vertex-indexed square matrix to the free unknowns."""
        free = self.free_vertices
        return sp.csr_matrix(matrix)[free][:, free]

    def extend(self, free_values: np.ndarray) -> np.ndarray:
        """Lift free values to a vertex field with zero boundary trace."""
        values = np.zeros(self.n_total)
        values[self.free_vertices] = free_values
        return values


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh of the unit interval or unit square."""

    dim: int
    n_cells_per_axis: int
    vertices: np.ndarray
    cells: np.ndarray
    interior_edges: np.ndarray
    facet_measure: np.ndarray
    boundary_node_mask: np.ndarray
    cell_volume: np.ndarray

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells_per_axis

    @property
    def domain_volume(self) -> float:
        return float(self.cell_volume.sum())

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def local_gradients(self) -> np.ndarray:
        """Gradients of the local hat functions, shape (cells, dim, dim+1)."""
        coords = self.vertices[self.cells]
        edges = coords[:, 1:, :] - coords[:, :1, :]
        inverse = np.linalg.inv(edges)
        grads = np.empty((self.n_cells, self.dim, self.dim + 1))
        grads[:, :, 1:] = inverse
        grads[:, :, 0] = -inverse.sum(axis=2)
        return grads

    @cached_property
    def gradient(self) -> sp.csr_matrix:
        return cell_gradient_operator(self)

    @cached_property
    def dofs(self) -> DofMap:
        return build_dof_map(self)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return mass_matrix(self)

    def cell_gradients(self, values: np.ndarray) -> np.ndarray:
        """Per-cell gradient vectors of a nodal field, shape (cells, dim)."""
        return np.einsum("tdj,tj->td", self.local_gradients, values[self.cells])

    def cell_values(self, values: np.ndarray) -> np.ndarray:
        """Barycentric values of a nodal P1 field (nodal averages)."""
        return values[self.cells].mean(axis=1)

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant of ``func`` evaluated on the vertex array."""
        return np.asarray(func(self.vertices), dtype=float)

    def integrate(self, cell_field: np.ndarray) -> float:
        """Midpoint rule for an elementwise field."""
        return float(np.dot(self.cell_volume, cell_field))


def build_mesh(dim: int, n: int) -> Mesh:
    """Build a uniform mesh of the unit interval (dim=1) or square (dim=2).

    Args:
        dim: Spatial dimension, 1 or 2.
        n: Number of cells per axis, at least 2.

    Returns:
        The mesh. In 2D every square is split along its main diagonal into
        two counter-clockwise triangles.

    Raises:
        ConfigurationError: If ``dim`` is unsupported or ``n < 2``.
    """
    if dim not in (1, 2):
        raise ConfigurationError(f"mesh.dim must be 1 or 2, got {dim}")
    if int(n) != n or n < 2:
        raise ConfigurationError(f"invalid mesh resolution n={n}: need n >= 2")
    n = int(n)

    if dim == 1:
        vertices = np.linspace(0.0, 1.0, n + 1).reshape(-1, 1)
        cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    else:
        ticks = np.linspace(0.0, 1.0, n + 1)
        xx, yy = np.meshgrid(ticks, ticks)
        vertices = np.column_stack([xx.ravel(), yy.ravel()])

        def vid(i: int, j: int) -> int:
            return j * (n + 1) + i

        triangles: List[Tuple[int, int, int]] = []
        for j in range(n):
            for i in range(n):
                triangles.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)))
                triangles.append((vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)))
        cells = np.array(triangles, dtype=int)

    coords = vertices[cells]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    cell_volume = np.abs(np.linalg.det(edges)) / math.factorial(dim)

    on_boundary = np.isclose(vertices, 0.0) | np.isclose(vertices, 1.0)
    boundary_node_mask = on_boundary.any(axis=1)

    interior_edges, facet_measure = _interior_facets(vertices, cells, dim)

    mesh = Mesh(
        dim=dim,
        n_cells_per_axis=n,
        vertices=vertices,
        cells=cells,
        interior_edges=interior_edges,
        facet_measure=facet_measure,
        boundary_node_mask=boundary_node_mask,
        cell_volume=cell_volume,
    )
    logger.debug(
        f"Built {dim}D mesh: {mesh.n_cells} cells, {mesh.n_vertices} vertices, "
        f"{len(interior_edges)} interior facets"
    )
    return mesh


def _interior_facets(
    vertices: np.ndarray, cells: np.ndarray, dim: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Enumerate facets shared by two cells and their measures."""
    owners: Dict[Tuple[int, ...], List[int]] = {}
    for cell_id, cell in enumerate(cells):
        for facet in itertools.combinations(sorted(int(v) for v in cell), dim):
            owners.setdefault(facet, []).append(cell_id)

    pairs = []
    measures = []
    for facet, cell_ids in owners.items():
        if len(cell_ids) != 2:
            continue
        if dim == 1:
            measure = 1.0
        else:
            a, b = vertices[list(facet)]
            measure = float(np.linalg.norm(b - a))
        pairs.append(tuple(sorted(cell_ids)))
        measures.append(measure)

    order = sorted(range(len(pairs)), key=lambda i: pairs[i])
    edges = np.array([pairs[i] for i in order], dtype=int).reshape(-1, 2)
    return edges, np.array([measures[i] for i in order], dtype=float)


def build_dof_map(mesh: Mesh) -> DofMap:
    """Number the interior vertices consecutively."""
    free_index = np.full(mesh.n_vertices, -1, dtype=int)
    interior = np.flatnonzero(~mesh.boundary_node_mask)
    free_index[interior] = np.arange(interior.size)
    return DofMap(n_total=mesh.n_vertices, n_free=int(interior.size), free_index=free_index)


def cell_gradient_operator(mesh: Mesh) -> sp.csr_matrix:
    """Sparse map from nodal values to stacked per-cell gradients.

    Row ``t * dim + d`` holds the d-th gradient component on cell t.
    """
    dim, ncells = mesh.dim, mesh.n_cells
    local = mesh.local_gradients
    rows = np.arange(ncells)[:, None, None] * dim + np.arange(dim)[None, :, None]
    rows = np.broadcast_to(rows, local.shape)
    cols = np.broadcast_to(mesh.cells[:, None, :], local.shape)
    return sp.csr_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(ncells * dim, mesh.n_vertices),
    )


def quadrature_points(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Barycentric one-point rule: (points, weights) with weights = volumes."""
    return mesh.barycenters.copy(), mesh.cell_volume.copy()


def assemble_stiffness(mesh: Mesh, coefficients: np.ndarray) -> sp.csr_matrix:
    """Assemble sum_T vol(T) (K_T grad phi_j, grad phi_i) over all vertices.

    Args:
        mesh: The mesh.
        coefficients: Per-cell symmetric matrices K_T, shape (cells, dim, dim).

    Returns:
        Symmetric sparse matrix over all vertices (no boundary treatment).
    """
    grads = mesh.local_gradients
    local = np.einsum("tdi,tde,tej->tij", grads, coefficients, grads)
    local *= mesh.cell_volume[:, None, None]
    size = mesh.dim + 1
    rows = np.broadcast_to(mesh.cells[:, :, None], (mesh.n_cells, size, size))
    cols = np.broadcast_to(mesh.cells[:, None, :], (mesh.n_cells, size, size))
    matrix = sp.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()
    # exact symmetry regardless of summation order
    return ((matrix + matrix.T) * 0.5).tocsr()


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix over all vertices."""
    size = mesh.dim + 1
    pattern = (np.ones((size, size)) + np.eye(size)) / ((size) * (size + 1))
    local = mesh.cell_volume[:, None, None] * pattern[None, :, :]
    rows = np.broadcast_to(mesh.cells[:, :, None], local.shape)
    cols = np.broadcast_to(mesh.cells[:, None, :], local.shape)
    return sp.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()


def identity_coefficients(mesh: Mesh) -> np.ndarray:
    """Per-cell identity matrices, the isotropic Laplacian coefficient."""
    return np.broadcast_to(np.eye(mesh.dim), (mesh.n_cells, mesh.dim, mesh.dim)).copy()
