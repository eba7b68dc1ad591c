"""Tests for kernels, nonlinearities and the Hammerstein Newton solver."""

import numpy as np
import pytest
from scipy.optimize import brentq

from anisopt.exceptions import ConfigurationError, SolverError
from anisopt.hammerstein import (
    HammersteinState,
    Kernel,
    apply_B,
    build_kernel,
    kernel_for_mesh,
    l2_bound_margin,
    nonlinearity_dz,
    nonlinearity_F,
    nonlinearity_F_reg,
    solve_hammerstein,
    uniqueness_probe,
    value_exceedance,
    zstate_header,
    zstate_rows,
)
from anisopt.plap import RegParams, StateField

SINGLE_POINT = np.array([[0.5]])
UNIT_WEIGHT = np.array([1.0])


def _single_cell_kernel(c: float) -> Kernel:
    return build_kernel("separable-rank1", SINGLE_POINT, UNIT_WEIGHT, c=c)


def test_power_nonlinearity_values():
    np.testing.assert_allclose(nonlinearity_F([2.0, -1.0], [1.0, 3.0], 3.0), [5.0, 8.0])
    np.testing.assert_allclose(nonlinearity_F([0.5], [-0.5], 2.0), [0.0])


def test_regularized_nonlinearity_value():
    reg = RegParams(epsilon=0.01, k=2.0)
    # (0.01 + 0.25) * 0.5 + (0.01 + 0.0625) * 0.25
    value = nonlinearity_F_reg(np.array([0.5]), np.array([0.25]), reg, 4.0)
    assert value[0] == pytest.approx(0.148125, abs=1e-14)


def test_regularized_nonlinearity_approaches_power_law():
    y = np.array([-0.8, 0.3, 1.2])
    z = np.array([0.5, -1.1, 0.0])
    reg = RegParams(epsilon=1e-10, k=2.0)
    np.testing.assert_allclose(
        nonlinearity_F_reg(y, z, reg, 3.0), nonlinearity_F(y, z, 3.0), atol=1e-8
    )


@pytest.mark.parametrize("reg", [None, RegParams(epsilon=0.05, k=1.0)])
def test_nonlinearity_dz_matches_finite_differences(reg):
    z = np.array([-1.3, -0.4, 0.2, 0.7, 1.2])
    y = np.zeros_like(z)
    h = 1e-6
    if reg is None:
        numeric = (nonlinearity_F(y, z + h, 3.0) - nonlinearity_F(y, z - h, 3.0)) / (2.0 * h)
    else:
        numeric = (
            nonlinearity_F_reg(y, z + h, reg, 3.0) - nonlinearity_F_reg(y, z - h, reg, 3.0)
        ) / (2.0 * h)
    np.testing.assert_allclose(nonlinearity_dz(z, 3.0, reg), numeric, rtol=1e-6)
    assert np.all(nonlinearity_dz(z, 3.0, reg) >= 0.0)


def test_gaussian_kernel_is_normalized(mesh_2d):
    kernel = kernel_for_mesh(mesh_2d, "gaussian", p=3.0)
    assert kernel.condition_value(3.0) == pytest.approx(1.0, rel=1e-12)
    assert kernel.positivity_margin() >= -1e-10
    np.testing.assert_allclose(kernel.kernel_values(), kernel.kernel_values().T, atol=1e-12)
    assert kernel.to_dict(3.0)["condition_C1"] == pytest.approx(1.0)


def test_explicit_kernel_scale_is_kept(mesh_1d):
    kernel = kernel_for_mesh(mesh_1d, "gaussian", c=2.0, sigma=0.5)
    assert kernel.c == 2.0
    assert kernel.kernel_values()[0, 0] == pytest.approx(2.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kernel_id": "laplace"},
        {"kernel_id": "gaussian", "sigma": 0.0},
        {"kernel_id": "separable-rank1", "c": -1.0},
    ],
)
def test_build_kernel_rejects_bad_input(kwargs):
    points = np.array([[0.25], [0.75]])
    weights = np.array([0.5, 0.5])
    with pytest.raises(ConfigurationError):
        build_kernel(points=points, weights=weights, **kwargs)


def test_build_kernel_rejects_nonpositive_weights():
    with pytest.raises(ConfigurationError, match="weights"):
        build_kernel("zero", np.array([[0.25], [0.75]]), np.array([0.5, 0.0]))


def test_apply_B_uses_weights():
    kernel = build_kernel("separable-rank1", np.array([[0.25], [0.75]]), np.array([0.25, 0.75]))
    np.testing.assert_allclose(apply_B(kernel, [4.0, 0.0]), [1.0, 1.0])


@pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
def test_single_cell_linear_case(c):
    z, report = solve_hammerstein(np.array([1.0]), _single_cell_kernel(c), 2.0)
    assert report.converged
    assert z.values[0] == pytest.approx(-c / (1.0 + c), abs=1e-10)


def test_single_cell_cubic_case():
    root = brentq(lambda s: s**3 + s + 1.0, -1.0, 0.0, xtol=1e-15)
    assert root == pytest.approx(-0.68233, abs=1e-5)
    z, report = solve_hammerstein(np.array([1.0]), _single_cell_kernel(1.0), 4.0)
    assert report.converged
    assert z.values[0] == pytest.approx(root, abs=1e-10)


def test_zero_kernel_returns_right_hand_side(mesh_1d):
    kernel = kernel_for_mesh(mesh_1d, "zero")
    g = np.linspace(-1.0, 1.0, mesh_1d.n_cells)
    z, report = solve_hammerstein(np.ones(mesh_1d.n_cells), kernel, 3.0, g=g)
    assert report.converged and report.iterations <= 1
    np.testing.assert_allclose(z.values, g)


def test_state_field_and_cell_values_agree(mesh_1d, reg):
    y = StateField(mesh_1d, mesh_1d.interpolate(lambda x: np.sin(np.pi * x[:, 0])))
    kernel = kernel_for_mesh(mesh_1d, "gaussian", p=3.0)
    from_field, _ = solve_hammerstein(y, kernel, 3.0, reg)
    from_cells, _ = solve_hammerstein(y.cell_values, kernel, 3.0, reg)
    np.testing.assert_array_equal(from_field.values, from_cells.values)


def test_cell_count_mismatch_is_rejected(mesh_1d):
    kernel = kernel_for_mesh(mesh_1d, "gaussian")
    with pytest.raises(ConfigurationError, match="cell values"):
        solve_hammerstein(np.ones(3), kernel, 2.0)


def test_singular_jacobian_raises_with_partial_state():
    singular = Kernel("separable-rank1", -1.0, None, SINGLE_POINT, UNIT_WEIGHT, np.array([[-1.0]]))
    with pytest.raises(SolverError) as info:
        solve_hammerstein(np.array([1.0]), singular, 2.0)
    assert isinstance(info.value.partial, HammersteinState)


def test_l2_bound_for_linear_case(mesh_2d):
    y = StateField(mesh_2d, mesh_2d.interpolate(lambda x: np.sin(np.pi * x[:, 0]) * x[:, 1]))
    kernel = kernel_for_mesh(mesh_2d, "gaussian", c=5.0)
    z, report = solve_hammerstein(y, kernel, 2.0)
    assert report.converged
    assert l2_bound_margin(z, y) >= 0.0


def test_uniqueness_probe_agrees_across_starts(mesh_1d, reg):
    y = mesh_1d.cell_values(mesh_1d.interpolate(lambda x: 3.0 * x[:, 0] * (1.0 - x[:, 0])))
    kernel = kernel_for_mesh(mesh_1d, "gaussian", p=3.0)
    assert uniqueness_probe(y, kernel, 3.0, reg, n_starts=5, seed=11) <= 1e-8
    with pytest.raises(ValueError):
        uniqueness_probe(y, kernel, 3.0, reg, n_starts=1)


def test_value_exceedance_respects_bound(mesh_1d):
    reg = RegParams(epsilon=0.01, k=1.0)
    weights = np.full(mesh_1d.n_cells, 1.0 / mesh_1d.n_cells)
    values = np.linspace(-3.0, 3.0, mesh_1d.n_cells)
    z = HammersteinState(values, mesh_1d.barycenters, weights)
    volume, bound = value_exceedance(z, reg, 3.0)
    assert 0.0 < volume <= bound


def test_zstate_rows_layout(mesh_2d):
    kernel = kernel_for_mesh(mesh_2d, "zero")
    z, _ = solve_hammerstein(np.zeros(mesh_2d.n_cells), kernel, 2.0)
    rows = zstate_rows(z)
    assert len(rows) == mesh_2d.n_cells
    assert len(rows[0]) == len(zstate_header(2))
