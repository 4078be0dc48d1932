import numpy as np
import pytest
import scipy.sparse as sp

from tubeshell.core.errors import DomainError, GridMismatchError
from tubeshell.core.geometry import BentTube, glue
from tubeshell.core.models import Grid2D, ScalarField
from tubeshell.core.operators import (
    apply,
    assemble,
    dirichlet_energy,
    gradient_sq,
    linearization,
    matrix_triplets,
)
from tubeshell.profiles.closed_form import CosineProfile


def test_stiffness_is_symmetric_with_constant_kernel(neck_profile, small_grid):
    op = assemble(BentTube(neck_profile, 0.3), small_grid)
    assert abs(op.stiffness - op.stiffness.T).max() == 0.0
    ones = np.ones(small_grid.size)
    assert np.max(np.abs(op.stiffness @ ones)) <= 1e-12
    assert np.all(op.mass > 0)
    assert np.all(op.stiffness.diagonal() < 0)


def test_straight_bent_tube_equals_straight_tube(neck_profile, small_grid):
    straight = assemble(neck_profile, small_grid)
    bent = assemble(BentTube(neck_profile, 0.0), small_grid)
    assert abs(straight.stiffness - bent.stiffness).max() == 0.0
    np.testing.assert_array_equal(straight.mass, bent.mass)


def test_total_area_of_cylinder(cylinder):
    op = assemble(cylinder, Grid2D.interval(16, 16, 1.0))
    assert op.total_area == pytest.approx(2 * np.pi, rel=1e-12)


def _cylinder_error(n_s):
    cylinder = CosineProfile(1.0, 0.0, 1.0)
    grid = Grid2D.interval(n_s, 8, 1.0)
    u = ScalarField.from_function(grid, lambda S, T: np.cos(np.pi * S))
    return np.max(np.abs(apply(assemble(cylinder, grid), u).values + np.pi**2 * u.values))


def test_cylinder_is_second_order():
    order = np.log2(_cylinder_error(64) / _cylinder_error(128))
    assert 1.9 <= order <= 2.1


def _torus_error(n_theta):
    a = 0.3
    glued = glue(CosineProfile(a, 0.0, 1.0), 2)
    k = glued.kappa
    grid = Grid2D.periodic(16, n_theta, glued.period)
    u = ScalarField.from_function(grid, lambda S, T: np.cos(T))
    S, T = grid.mesh()
    exact = (-np.cos(T) + k * a * np.cos(2 * T)) / (a**2 * (1 - k * a * np.cos(T)))
    return np.max(np.abs(apply(assemble(glued, grid), u).values - exact.ravel()))


def test_torus_is_second_order():
    order = np.log2(_torus_error(32) / _torus_error(64))
    assert 1.8 <= order <= 2.2


def test_linearity_and_adjointness(neck_profile, small_grid, rng):
    op = assemble(BentTube(neck_profile, -0.2), small_grid)
    u = ScalarField(small_grid, rng.standard_normal(small_grid.size))
    v = ScalarField(small_grid, rng.standard_normal(small_grid.size))
    combined = apply(op, u.with_values(2.0 * u.values - 3.0 * v.values)).values
    np.testing.assert_allclose(combined, 2.0 * apply(op, u).values - 3.0 * apply(op, v).values, atol=1e-9)
    assert op.inner(apply(op, u), v) == pytest.approx(op.inner(u, apply(op, v)), rel=1e-10, abs=1e-9)


def test_green_identity(neck_profile, small_grid, rng):
    op = assemble(neck_profile, small_grid)
    u = ScalarField(small_grid, rng.standard_normal(small_grid.size))
    energy = dirichlet_energy(op, u)
    assert energy > 0
    assert -op.inner(apply(op, u), u) == pytest.approx(energy, rel=1e-10)
    assert dirichlet_energy(op, ScalarField.constant(small_grid, 3.0)) == pytest.approx(0.0, abs=1e-10)


def test_linearization_adds_weighted_potential(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    jacobian = linearization(op, np.full(small_grid.size, 2.0))
    expected = op.stiffness + sp.diags(2.0 * op.mass)
    assert abs(jacobian - expected).max() <= 1e-12 * abs(expected).max()


def test_topology_mismatch(neck_profile, glued_thin):
    with pytest.raises(DomainError):
        assemble(neck_profile, Grid2D.periodic(16, 8, 1.0))
    with pytest.raises(DomainError):
        assemble(neck_profile, Grid2D.interval(16, 8, 2.0))
    with pytest.raises(DomainError):
        assemble(glued_thin, Grid2D.interval(16, 8, glued_thin.period))
    with pytest.raises(DomainError, match="kappa = 0"):
        assemble(BentTube(neck_profile, 0.1), Grid2D.interval(16, 1, 1.0))


def test_field_on_other_grid_rejected(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    with pytest.raises(GridMismatchError):
        apply(op, ScalarField.constant(Grid2D.interval(16, 8, 1.0), 1.0))


def test_gradient_of_constant_and_linear_fields(cylinder):
    grid = Grid2D.interval(16, 8, 1.0)
    op = assemble(cylinder, grid)
    assert gradient_sq(op, ScalarField.constant(grid, 2.0)).sup_norm() == 0.0
    linear = ScalarField.from_function(grid, lambda S, T: 3.0 * S)
    np.testing.assert_allclose(gradient_sq(op, linear).values, 9.0, rtol=1e-12)


def test_triplets_are_sorted(neck_profile):
    op = assemble(neck_profile, Grid2D.interval(8, 8, 1.0))
    rows, cols, data = matrix_triplets(op)
    keys = rows * op.grid.size + cols
    assert np.all(np.diff(keys) > 0)
    assert data.size == op.stiffness.nnz
