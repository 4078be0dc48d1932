import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from tubeshell.core.errors import DomainError, NewtonDivergenceError, NoContinuationError, SelfIntersectionError
from tubeshell.core.geometry import check_admissibility
from tubeshell.core.models import Grid2D, ScalarField, StabilityClass, SynthesisMode
from tubeshell.core.nonlinearity import Nonlinearity, pattern_field, synthesize_f
from tubeshell.core.operators import assemble
from tubeshell.services.dynamics_service import random_smooth_field
from tubeshell.services.solver_service import (
    REGULARIZATION_LEVELS,
    _solve_jacobian,
    classify_stability,
    continue_in_kappa,
    energy,
    newton_solve,
    principal_eigenpair,
    rayleigh_quotient,
    residual,
    weighted_residual,
)


def test_newton_accepts_exact_equilibrium(exact_setup, small_grid):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    solution, norm = newton_solve(op, nl, U)
    assert norm <= 1e-10
    assert solution.sup_distance(U) == 0.0


def test_newton_returns_to_equilibrium(exact_setup, small_grid):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    bump = ScalarField.from_function(small_grid, lambda S, T: 1e-3 * np.cos(T))
    start = U.with_values(U.values + bump.values)
    solution, norm = newton_solve(op, nl, start, tol=1e-11, max_iter=50)
    assert norm <= 1e-11
    assert energy(op, nl, solution) < energy(op, nl, start)
    assert solution.sup_distance(U) <= 1e-8
    assert residual(op, nl, solution).sup_norm() == pytest.approx(norm)


def test_newton_on_linear_problem(neck_profile, small_grid, rng):
    op = assemble(neck_profile, small_grid)
    u0 = ScalarField(small_grid, rng.standard_normal(small_grid.size))
    solution, norm = newton_solve(op, Nonlinearity.affine(-1.0), u0)
    assert norm <= 1e-10
    assert solution.sup_norm() <= 1e-10


def test_newton_iteration_budget(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    u0 = ScalarField.constant(small_grid, 1.0)
    with pytest.raises(NewtonDivergenceError) as info:
        newton_solve(op, Nonlinearity.affine(-1.0), u0, max_iter=0)
    assert info.value.history == [pytest.approx(1.0)]


def test_newton_refuses_to_climb_to_saddle(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    start = ScalarField.constant(small_grid, 0.1)
    # the full step lands on the unstable equilibrium u = 0, every shorter one raises the energy
    with pytest.raises(NewtonDivergenceError) as info:
        newton_solve(op, Nonlinearity.affine(1.0), start)
    assert info.value.history[0] == pytest.approx(0.1)
    assert len(info.value.history) == 2


def test_energy_gradient_is_minus_weighted_residual(exact_setup, small_grid):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    u = U.with_values(U.values + 0.05 * random_smooth_field(small_grid, np.random.default_rng(3)).values)
    v = random_smooth_field(small_grid, np.random.default_rng(4))
    eps = 1e-6
    forward = energy(op, nl, u.with_values(u.values + eps * v.values))
    backward = energy(op, nl, u.with_values(u.values - eps * v.values))
    directional = -float(np.dot(weighted_residual(op, nl, u), v.values))
    assert (forward - backward) / (2.0 * eps) == pytest.approx(directional, rel=1e-4)


def test_newton_rejects_bad_tolerance(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    with pytest.raises(DomainError):
        newton_solve(op, Nonlinearity.affine(-1.0), ScalarField.constant(small_grid, 0.0), tol=0.0)


def test_singular_jacobian_is_regularized():
    mass = np.array([1.0, 2.0, 4.0])
    rhs = np.array([1.0, 1.0, 1.0])
    step = _solve_jacobian(sp.csr_matrix((3, 3)), mass, rhs)
    np.testing.assert_allclose(step, rhs / (REGULARIZATION_LEVELS[0] * mass), rtol=1e-12)


def test_eigenpair_without_potential(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    pair = principal_eigenpair(op, np.zeros(small_grid.size))
    assert abs(pair.eigenvalue) <= 1e-9
    phi = pair.eigenfunction.values
    np.testing.assert_allclose(phi, phi.mean(), rtol=1e-8)
    assert op.inner(pair.eigenfunction, pair.eigenfunction) == pytest.approx(1.0)


def test_constant_potential_shifts_spectrum(neck_profile, small_grid):
    op = assemble(neck_profile, small_grid)
    pair = principal_eigenpair(op, np.full(small_grid.size, -2.5))
    assert pair.eigenvalue == pytest.approx(2.5, abs=1e-9)


def test_eigenpair_matches_dense_solver(exact_setup, small_grid):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    F = nl.derivative(U.values)
    pair = principal_eigenpair(op, F)

    A = -op.stiffness.toarray() - np.diag(op.mass * F)
    reference = scipy.linalg.eigh(A, np.diag(op.mass), eigvals_only=True, subset_by_index=[0, 0])[0]
    assert pair.eigenvalue == pytest.approx(reference, abs=1e-8)
    assert np.all(pair.eigenfunction.values > 0)
    assert op.inner(pair.eigenfunction, pair.eigenfunction) == pytest.approx(1.0)
    assert rayleigh_quotient(op, F, pair.eigenfunction) == pytest.approx(pair.eigenvalue, abs=1e-9)


def test_rayleigh_quotient_bounds_eigenvalue(exact_setup, small_grid, rng):
    profile, nl, U = exact_setup
    op = assemble(profile, small_grid)
    F = nl.derivative(U.values)
    lam = principal_eigenpair(op, F).eigenvalue
    q = ScalarField(small_grid, rng.standard_normal(small_grid.size))
    assert rayleigh_quotient(op, F, q) >= lam - 1e-9
    scaled = q.with_values(7.0 * q.values)
    assert rayleigh_quotient(op, F, scaled) == pytest.approx(rayleigh_quotient(op, F, q))
    with pytest.raises(DomainError):
        rayleigh_quotient(op, F, ScalarField.constant(small_grid, 0.0))


def test_axisymmetric_eigenvalue_matches_full_grid(exact_setup, pattern, small_grid):
    profile, nl, _ = exact_setup
    values = []
    for grid in (small_grid, Grid2D.interval(small_grid.n_s, 1, small_grid.length)):
        U = pattern_field(pattern, grid)
        values.append(principal_eigenpair(assemble(profile, grid), nl.derivative(U.values)).eigenvalue)
    assert values[0] == pytest.approx(values[1], abs=1e-8)


@pytest.mark.parametrize(
    "lambda1, expected",
    [(0.5, StabilityClass.STABLE), (-0.5, StabilityClass.UNSTABLE), (1e-10, StabilityClass.UNDETERMINED)],
)
def test_classify_stability(lambda1, expected):
    assert classify_stability(lambda1) is expected


def test_zero_target_gives_single_step(neck_profile, small_grid):
    base = ScalarField.constant(small_grid, 0.0)
    trace = continue_in_kappa(neck_profile, Nonlinearity.affine(-1.0), base, 0.0)
    assert trace.completed
    assert len(trace.steps) == 1
    assert trace.kappa_bound == 0.0
    assert trace.last.lambda1 == pytest.approx(1.0, abs=1e-9)


def test_continuation_reaches_target(neck_profile, small_grid):
    base = ScalarField.constant(small_grid, 0.0)
    trace = continue_in_kappa(neck_profile, Nonlinearity.affine(-1.0), base, -0.4, steps=4)
    assert trace.completed
    np.testing.assert_allclose([s.kappa for s in trace.steps], [0.0, -0.1, -0.2, -0.3, -0.4], atol=1e-15)
    assert trace.kappa_bound == pytest.approx(0.4)
    assert all(s.residual <= 1e-10 for s in trace.steps)
    assert all(s.lambda1 > 0 for s in trace.steps)
    distortion = [s.volume_distortion for s in trace.steps]
    assert distortion[0] == 0.0
    assert np.all(np.diff(distortion) > 0)


def test_unstable_base_has_no_continuation(neck_profile, small_grid):
    base = ScalarField.constant(small_grid, 0.0)
    with pytest.raises(NoContinuationError):
        continue_in_kappa(neck_profile, Nonlinearity.affine(1.0), base, 0.2, steps=2)


def test_continuation_rejects_self_intersecting_target(neck_profile, small_grid):
    base = ScalarField.constant(small_grid, 0.0)
    with pytest.raises(SelfIntersectionError):
        continue_in_kappa(neck_profile, Nonlinearity.affine(-1.0), base, 0.7)


@pytest.mark.parametrize("kind", ["zero", "minus_one", "random"])
def test_eigenvalue_against_dense_spectrum(neck_profile, kind):
    grid = Grid2D.interval(16, 8, 1.0)
    op = assemble(neck_profile, grid)
    potential = {
        "zero": np.zeros(grid.size),
        "minus_one": np.full(grid.size, -1.0),
        "random": 3.0 * random_smooth_field(grid, np.random.default_rng(5)).values,
    }[kind]
    A = -op.stiffness.toarray() - np.diag(op.mass * potential)
    spectrum = scipy.linalg.eigh(A, np.diag(op.mass), eigvals_only=True)
    pair = principal_eigenpair(op, potential)
    assert pair.eigenvalue == pytest.approx(spectrum[0], abs=1e-8)
    if kind == "minus_one":
        assert pair.eigenvalue == pytest.approx(1.0, abs=1e-8)
    assert np.all(pair.eigenfunction.values > 0)


def test_branch_moves_linearly_in_kappa(exact_setup):
    profile, nl, U = exact_setup
    trace = continue_in_kappa(profile, nl, U, 0.1, steps=4)
    assert trace.completed
    assert all(s.residual <= 1e-10 for s in trace.steps)
    base_lambda = trace.steps[0].lambda1
    picked = [trace.steps[k] for k in (4, 2, 1)]
    np.testing.assert_allclose([s.kappa for s in picked], [0.1, 0.05, 0.025], atol=1e-15)
    gaps = np.array([s.sup_gap for s in picked])
    shifts = [abs(s.lambda1 - base_lambda) for s in picked]
    ratios = gaps[1:] / gaps[:-1]
    assert np.all((ratios >= 0.35) & (ratios <= 0.65))
    assert shifts[0] > shifts[1] > shifts[2]


def test_principal_eigenvalue_converges_along_halved_curvatures(exact_setup, pattern):
    profile, nl, U = exact_setup
    trace = continue_in_kappa(profile, nl, U, 0.02, steps=8)
    assert trace.completed
    assert all(s.residual <= 1e-10 for s in trace.steps)
    picked = [trace.steps[k] for k in (8, 4, 2, 1)]
    np.testing.assert_allclose([s.kappa for s in picked], [0.02, 0.01, 0.005, 0.0025], atol=1e-15)

    gaps = [abs(s.lambda1 - trace.steps[0].lambda1) for s in picked]
    assert gaps[0] > gaps[1] > gaps[2] > gaps[3]

    fine = Grid2D.interval(64, 8, 1.0)
    fine_nl = synthesize_f(profile, pattern, SynthesisMode.DISCRETE_EXACT, grid=fine)
    fine_lambda = principal_eigenpair(
        assemble(profile, fine), fine_nl.derivative(pattern_field(pattern, fine).values)
    ).eigenvalue
    discretization = abs(fine_lambda - trace.steps[0].lambda1)
    assert gaps[-1] <= max(1e-3, 5.0 * discretization)

    sup_gaps = np.array([s.sup_gap for s in picked])
    np.testing.assert_allclose(sup_gaps[1:] / sup_gaps[:-1], 0.5, rtol=0.3)


def test_fine_axisymmetric_pattern_is_stable(neck_profile, pattern):
    assert check_admissibility(neck_profile).passed
    line = Grid2D.interval(256, 1, 1.0)
    nl = synthesize_f(neck_profile, pattern, SynthesisMode.DISCRETE_EXACT, grid=line)
    U = pattern_field(pattern, line)
    op = assemble(neck_profile, line)
    assert residual(op, nl, U).sup_norm() <= 1e-10
    axisymmetric = principal_eigenpair(op, nl.derivative(U.values)).eigenvalue
    assert axisymmetric >= 0.01

    full = Grid2D.interval(256, 8, 1.0)
    U_full = pattern_field(pattern, full)
    full_lambda = principal_eigenpair(assemble(neck_profile, full), nl.derivative(U_full.values)).eigenvalue
    assert full_lambda == pytest.approx(axisymmetric, abs=1e-6)
