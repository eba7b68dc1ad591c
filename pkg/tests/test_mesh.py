"""Tests for mesh construction, assembly and quadrature."""

import math

import numpy as np
import pytest

from anisopt.exceptions import ConfigurationError
from anisopt.mesh import (
    assemble_stiffness,
    build_mesh,
    identity_coefficients,
    quadrature_points,
)


def test_interval_mesh_layout():
    mesh = build_mesh(1, 4)
    assert mesh.n_vertices == 5
    assert mesh.n_cells == 4
    np.testing.assert_allclose(mesh.cell_volume, 0.25)
    assert mesh.boundary_node_mask.tolist() == [True, False, False, False, True]
    assert mesh.interior_edges.tolist() == [[0, 1], [1, 2], [2, 3]]
    np.testing.assert_allclose(mesh.facet_measure, 1.0)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_square_mesh_layout(n):
    mesh = build_mesh(2, n)
    assert mesh.n_vertices == (n + 1) ** 2
    assert mesh.n_cells == 2 * n * n
    assert mesh.domain_volume == pytest.approx(1.0)
    np.testing.assert_allclose(mesh.cell_volume, 0.5 / n**2)
    assert len(mesh.interior_edges) == n * n + 2 * n * (n - 1)
    assert sorted(set(np.round(mesh.facet_measure, 12))) == pytest.approx(
        [1.0 / n, math.sqrt(2.0) / n]
    )
    assert mesh.dofs.n_free == (n - 1) ** 2


@pytest.mark.parametrize("dim,n", [(1, 1), (1, 0), (3, 4), (2, 1)])
def test_invalid_mesh_rejected(dim, n):
    with pytest.raises(ConfigurationError):
        build_mesh(dim, n)


def test_gradients_of_linear_field_are_exact():
    mesh = build_mesh(2, 4)
    values = mesh.interpolate(lambda x: 1.0 + x[:, 0] + 2.0 * x[:, 1])
    np.testing.assert_allclose(mesh.cell_gradients(values), [[1.0, 2.0]] * mesh.n_cells)
    np.testing.assert_allclose(mesh.local_gradients.sum(axis=2), 0.0, atol=1e-12)


def test_gradient_operator_matches_cell_gradients(mesh_2d):
    values = np.random.default_rng(3).standard_normal(mesh_2d.n_vertices)
    stacked = mesh_2d.gradient @ values
    np.testing.assert_allclose(stacked.reshape(-1, 2), mesh_2d.cell_gradients(values))


def test_stiffness_annihilates_constants(mesh_2d):
    stiffness = assemble_stiffness(mesh_2d, identity_coefficients(mesh_2d))
    np.testing.assert_allclose(stiffness @ np.ones(mesh_2d.n_vertices), 0.0, atol=1e-12)
    assert abs(stiffness - stiffness.T).max() == 0.0


def test_mass_matrix_integrates_one(mesh_2d):
    ones = np.ones(mesh_2d.n_vertices)
    assert ones @ (mesh_2d.mass @ ones) == pytest.approx(1.0)


def test_dof_map_extend_and_restrict(mesh_1d):
    dofs = mesh_1d.dofs
    free_values = np.arange(dofs.n_free, dtype=float) + 1.0
    full = dofs.extend(free_values)
    assert full[0] == 0.0 and full[-1] == 0.0
    np.testing.assert_array_equal(full[dofs.free_vertices], free_values)
    stiffness = assemble_stiffness(mesh_1d, identity_coefficients(mesh_1d))
    assert dofs.restrict(stiffness).shape == (dofs.n_free, dofs.n_free)


def test_quadrature_points_are_barycenters():
    mesh = build_mesh(1, 4)
    points, weights = quadrature_points(mesh)
    np.testing.assert_allclose(points[:, 0], [0.125, 0.375, 0.625, 0.875])
    assert weights.sum() == pytest.approx(1.0)
