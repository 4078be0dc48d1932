import numpy as np
import pytest

from tubeshell.core.errors import DomainError
from tubeshell.core.models import EigenPair, Grid2D, ScalarField, Trajectory
from tubeshell.core.nonlinearity import Nonlinearity
from tubeshell.core.operators import assemble
from tubeshell.services.solver_service import principal_eigenpair
from tubeshell.services.dynamics_service import (
    DECAY_TOLERANCE,
    MAX_TIME_STEP,
    linear_decay_check,
    default_time_step,
    integrate,
    measure_decay_rate,
    random_smooth_field,
    reflect_rows,
    stabilization_for,
    stability_probe,
)


def test_equilibrium_stays_put(exact_setup, small_grid):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    c = stabilization_for(nl, U, 0.01)
    trajectory = integrate(op, nl, U, T=0.1, dt=0.01, stabilization=c)
    assert trajectory.max_deviation <= 1e-9
    assert trajectory.times[-1] == pytest.approx(0.1)


def test_heat_flow_conserves_mass_and_decays(neck_profile, small_grid, rng):
    op = assemble(neck_profile, small_grid)
    u0 = random_smooth_field(small_grid, rng)
    mean = np.dot(op.mass, u0.values) / op.total_area
    trajectory = integrate(
        op, Nonlinearity.affine(0.0), u0, T=0.5, dt=0.01,
        reference=ScalarField.constant(small_grid, mean),
    )
    assert np.dot(op.mass, trajectory.final.values) == pytest.approx(np.dot(op.mass, u0.values), abs=1e-9)
    assert np.all(np.diff(trajectory.deviations) <= 1e-10)
    assert trajectory.final_deviation < trajectory.deviations[0]


def test_records_at_most_hundred_samples(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    u0 = ScalarField.constant(small_grid, 1.0)
    trajectory = integrate(op, Nonlinearity.affine(-1.0), u0, T=5.0, dt=0.01)
    assert len(trajectory.times) == 101
    assert trajectory.deviations[0] == 0.0


def test_decay_rate_of_exponential():
    t = np.linspace(0.0, 3.0, 61)
    assert measure_decay_rate(Trajectory(t, 0.01 * np.exp(-2.0 * t))) == pytest.approx(2.0, rel=1e-9)


def test_decay_rate_of_linear_reaction(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    nl = Nonlinearity.affine(-1.0)
    zero = ScalarField.constant(small_grid, 0.0)
    c = stabilization_for(nl, zero, 0.01)
    trajectory = integrate(op, nl, ScalarField.constant(small_grid, 0.01), T=5.0, dt=0.01, reference=zero, stabilization=c)
    assert measure_decay_rate(trajectory) == pytest.approx(1.0, rel=0.15)


def test_decay_rate_of_zero_deviation_is_undefined():
    with pytest.raises(DomainError):
        measure_decay_rate(Trajectory(np.array([0.0, 1.0]), np.array([0.0, 0.0])))


def test_principal_mode_decays_at_principal_eigenvalue(exact_setup, small_grid):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    pair = principal_eigenpair(op, nl.derivative(U.values))
    check = linear_decay_check(op, nl, U, pair)
    assert check.lambda1 == pair.eigenvalue
    assert check.T == pytest.approx(2.0 * np.log(10.0) / pair.eigenvalue)
    assert check.relative_error <= DECAY_TOLERANCE
    assert check.passed


def test_decay_check_on_linear_reaction_is_tight(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    nl = Nonlinearity.affine(-1.0)
    U = ScalarField.constant(small_grid, 0.0)
    pair = principal_eigenpair(op, nl.derivative(U.values))
    check = linear_decay_check(op, nl, U, pair, amplitude=1e-3)
    assert check.rate == pytest.approx(1.0, rel=1e-3)


def test_decay_check_needs_positive_eigenvalue(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    U = ScalarField.constant(small_grid, 0.0)
    pair = EigenPair(-1.0, ScalarField.constant(small_grid, 1.0))
    with pytest.raises(DomainError, match="positive principal eigenvalue"):
        linear_decay_check(op, Nonlinearity.affine(1.0), U, pair)


def test_random_field_is_normalized_and_seeded(small_grid):
    first = random_smooth_field(small_grid, np.random.default_rng(7))
    second = random_smooth_field(small_grid, np.random.default_rng(7))
    assert first.sup_norm() == pytest.approx(1.0)
    np.testing.assert_array_equal(first.values, second.values)


def test_reflection_symmetry_is_preserved(glued_thin):
    grid = Grid2D.periodic(32, 8, glued_thin.period)
    op = assemble(glued_thin, grid)
    u0 = ScalarField.from_function(grid, lambda S, T: np.cos(2 * np.pi * S / grid.length) + 0.3 * np.cos(T))
    np.testing.assert_allclose(u0.values, reflect_rows(grid, u0.values), atol=1e-14)
    trajectory = integrate(op, Nonlinearity.affine(-1.0), u0, T=0.2, dt=0.01)
    final = trajectory.final.values
    assert np.max(np.abs(final - reflect_rows(grid, final))) <= 1e-10


def test_stabilization_and_default_step(exact_setup):
    _, nl, U = exact_setup
    c = stabilization_for(nl, U, 0.01)
    assert c.shape == U.values.shape
    assert np.all(c >= 0)
    assert 0 < default_time_step(nl, U, 0.01) <= MAX_TIME_STEP
    assert default_time_step(Nonlinearity.affine(-1.0), U, 0.01) == MAX_TIME_STEP


def test_integrate_rejects_bad_steps(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    u0 = ScalarField.constant(small_grid, 0.0)
    with pytest.raises(DomainError):
        integrate(op, Nonlinearity.affine(-1.0), u0, T=1.0, dt=0.0)
    with pytest.raises(DomainError):
        integrate(op, Nonlinearity.affine(-1.0), u0, T=0.001, dt=0.01)


@pytest.mark.parametrize("workers", [1, 2])
def test_stability_run_of_damped_linear_problem(neck_profile, small_grid, workers):
    op = assemble(neck_profile, small_grid)
    zero = ScalarField.constant(small_grid, 0.0)
    report = stability_probe(op, Nonlinearity.affine(-1.0), zero, delta=0.01, T=5.0, trials=4, seed=3, workers=workers)
    assert [t.label for t in report.trials] == ["+delta", "-delta", "random[0]", "random[1]"]
    assert report.sandwich_ok
    assert report.passed
    assert report.max_deviation <= 0.01 + 1e-12
    assert report.symmetry_defect is None


def test_stability_run_rejects_bad_arguments(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    zero = ScalarField.constant(small_grid, 0.0)
    with pytest.raises(DomainError):
        stability_probe(op, Nonlinearity.affine(-1.0), zero, delta=0.0, T=1.0)
    with pytest.raises(DomainError):
        stability_probe(op, Nonlinearity.affine(-1.0), zero, delta=0.01, T=1.0, trials=1)
