"""Tests for admissible controls, projection, TV and parameterizations."""

import logging
import math

import numpy as np
import pytest

from anisopt.control_set import (
    ControlBounds,
    ControlField,
    control_from_rows,
    control_rows,
    discrete_tv,
    matrix_sqrt,
    named_control,
    norm_equivalence_margin,
    parameterize,
    project_to_admissible,
    spectral_margin,
)
from anisopt.exceptions import ConfigurationError
from anisopt.mesh import build_mesh


def test_bounds_validation():
    with pytest.raises(ConfigurationError):
        ControlBounds(xi1=0.5, xi2=2.0, alpha=0.6, gamma=1.0)
    with pytest.raises(ConfigurationError):
        ControlBounds(xi1=2.0, xi2=1.0, alpha=0.5, gamma=1.0)
    with pytest.raises(ConfigurationError):
        ControlBounds(xi1=0.5, xi2=2.0, alpha=0.5, gamma=0.0)


def test_matrix_sqrt_squares_back():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((20, 2, 2))
    spd = raw @ np.swapaxes(raw, 1, 2) + 0.1 * np.eye(2)
    roots = matrix_sqrt(spd)
    np.testing.assert_allclose(roots @ roots, spd, atol=1e-12)
    np.testing.assert_allclose(roots, np.swapaxes(roots, 1, 2), atol=1e-14)


def test_constant_control_has_zero_tv(mesh_2d, bounds):
    field = named_control("rotated-anisotropic", mesh_2d, bounds)
    report = discrete_tv(field, mesh_2d, bounds)
    assert report.tv_value == pytest.approx(0.0, abs=1e-14)
    assert report.within_budget


def test_two_block_tv_in_1d(bounds):
    mesh = build_mesh(1, 4)
    field = parameterize([bounds.lower, 1.0, bounds.upper, 1.0], "two-block", mesh, bounds)
    assert discrete_tv(field, mesh).tv_value == pytest.approx(bounds.xi2 - bounds.xi1)


def test_two_block_tv_in_2d(bounds):
    # interface x = 1/2 has total length 1; the jump of S is (xi2 - xi1) I
    mesh = build_mesh(2, 4)
    field = named_control("two-block", mesh, bounds)
    expected = math.sqrt(2.0) * (bounds.xi2 - bounds.xi1)
    assert discrete_tv(field, mesh, bounds).tv_value == pytest.approx(expected, rel=1e-12)


def test_tv_budget_flag(bounds):
    mesh = build_mesh(2, 4)
    tight = ControlBounds(bounds.xi1, bounds.xi2, bounds.alpha, gamma=1.0)
    report = discrete_tv(named_control("two-block", mesh, tight), mesh, tight)
    assert not report.within_budget
    assert report.gamma == 1.0


def test_projection_clips_spectrum(bounds):
    matrices = np.array([[[10.0, 0.0], [0.0, 0.01]], [[1.0, 0.0], [0.0, 1.0]]])
    projected = project_to_admissible(ControlField.from_matrices(matrices), bounds)
    eigs = projected.eigenvalues()
    assert eigs.min() >= bounds.lower - 1e-12
    assert eigs.max() <= bounds.upper + 1e-12
    np.testing.assert_array_equal(projected.matrices[1], np.eye(2))
    assert projected.is_admissible(bounds)


def test_projection_is_idempotent(mesh_2d, bounds):
    field = named_control("rotated-anisotropic", mesh_2d, bounds)
    once = project_to_admissible(field, bounds)
    twice = project_to_admissible(once, bounds)
    np.testing.assert_array_equal(once.matrices, field.matrices)
    np.testing.assert_array_equal(twice.matrices, once.matrices)


def test_projection_symmetrizes_with_warning(bounds, caplog):
    matrices = np.array([[[1.0, 0.4], [0.0, 1.0]]])
    with caplog.at_level(logging.WARNING, logger="anisopt.control_set"):
        projected = project_to_admissible(ControlField.from_matrices(matrices), bounds)
    assert "symmetrizing" in caplog.text
    np.testing.assert_allclose(projected.matrices[0], [[1.0, 0.2], [0.2, 1.0]])


@pytest.mark.parametrize(
    "theta,scheme",
    [([1.0], "constant-diagonal"), ([1.0, 1.0], "constant-rotated"), ([1.0] * 3, "two-block")],
)
def test_parameterize_rejects_wrong_length(mesh_2d, bounds, theta, scheme):
    with pytest.raises(ConfigurationError):
        parameterize(theta, scheme, mesh_2d, bounds)


def test_parameterize_rejects_unknown_scheme(mesh_2d, bounds):
    with pytest.raises(ConfigurationError, match="unknown control scheme"):
        parameterize([1.0, 1.0], "per-cell", mesh_2d, bounds)


def test_rotated_scheme_spectrum(mesh_2d, bounds):
    field = parameterize([0.5, 3.0, math.pi / 3.0], "constant-rotated", mesh_2d, bounds)
    np.testing.assert_allclose(field.eigenvalues()[0], [0.5, 3.0], atol=1e-12)
    assert spectral_margin(field, bounds) >= -1e-12


def test_parameterize_clips_out_of_range(mesh_1d, bounds):
    field = parameterize([100.0, 0.0], "constant-diagonal", mesh_1d, bounds)
    np.testing.assert_allclose(field.matrices[:, 0, 0], bounds.upper)


@pytest.mark.parametrize("name", ["identity", "rotated-anisotropic", "two-block"])
def test_named_controls_are_admissible(mesh_2d, bounds, name):
    field = named_control(name, mesh_2d, bounds)
    assert field.is_admissible(bounds)
    assert spectral_margin(field, bounds) >= -1e-12
    assert norm_equivalence_margin(field) >= -1e-12


def test_unknown_named_control(mesh_2d, bounds):
    with pytest.raises(ConfigurationError):
        named_control("checkerboard", mesh_2d, bounds)


def test_control_rows_round_trip(mesh_2d, bounds):
    field = named_control("rotated-anisotropic", mesh_2d, bounds)
    restored = control_from_rows(control_rows(field), dim=2)
    np.testing.assert_array_equal(restored.matrices, field.matrices)
