"""Stationary problems: Newton for Delta u + f(u) = 0, continuation in kappa and
the principal eigenpair of the linearization -(Delta + f'(U))."""

import logging
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh, splu

from tubeshell.core.errors import (
    DomainError,
    EigenConvergenceError,
    FoldDetectedError,
    NewtonDivergenceError,
    NoContinuationError,
    NotPrincipalError,
    SelfIntersectionError,
    SolverError,
)
from tubeshell.core.geometry import BentTube, volume_distortion
from tubeshell.core.models import ContinuationStep, ContinuationTrace, EigenPair, ScalarField, StabilityClass
from tubeshell.core.nonlinearity import Nonlinearity
from tubeshell.core.operators import DiscreteOperator, assemble, linearization
from tubeshell.profiles.base import ProfileCurve

logger = logging.getLogger(__name__)

Potential = Union[ScalarField, np.ndarray]

MAX_BACKTRACKS = 8
ARMIJO = 1e-4
ENERGY_SLACK = 1e-10
REGULARIZATION_LEVELS = (1e-12, 1e-10, 1e-8)
MAX_STEP_HALVINGS = 3


def _values(potential: Potential) -> np.ndarray:
    if isinstance(potential, ScalarField):
        return potential.values
    return np.asarray(potential, dtype=float).reshape(-1)


def residual(op: DiscreteOperator, nl: Nonlinearity, u: ScalarField) -> ScalarField:
    """M^-1 L u + f(u) nodewise."""
    op._check(u)
    return u.with_values(op.stiffness @ u.values / op.mass + nl(u.values))


def weighted_residual(op: DiscreteOperator, nl: Nonlinearity, u: ScalarField) -> np.ndarray:
    """L u + M f(u); the form whose entries carry the cell measure."""
    op._check(u)
    return op.stiffness @ u.values + op.mass * nl(u.values)


def _solve_jacobian(jacobian: sp.csr_matrix, mass: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        step = splu(jacobian.tocsc()).solve(rhs)
        if np.all(np.isfinite(step)):
            return step
    except RuntimeError:
        pass
    for level in REGULARIZATION_LEVELS:
        logger.warning("singular Newton Jacobian, regularizing with %.0e * M", level)
        try:
            step = splu((jacobian + sp.diags(level * mass)).tocsc()).solve(rhs)
        except RuntimeError:
            continue
        if np.all(np.isfinite(step)):
            return step
    raise FoldDetectedError("fold detected: Jacobian stays singular after regularization")


def _energy(op: DiscreteOperator, nl: Nonlinearity, u: np.ndarray) -> float:
    return -0.5 * float(np.dot(u, op.stiffness @ u)) - float(np.dot(op.mass, nl.primitive(u)))


def energy(op: DiscreteOperator, nl: Nonlinearity, u: ScalarField) -> float:
    """E(u) = -1/2 u.L u - sum M G(u), with G' = f.

    The gradient of E is minus the weighted residual and its Hessian is minus
    the Newton Jacobian, so stable patterns are strict local minimizers.
    """
    op._check(u)
    return _energy(op, nl, u.values)


def _nodewise_norm(op: DiscreteOperator, nl: Nonlinearity, u: np.ndarray) -> float:
    return float(np.max(np.abs(op.stiffness @ u / op.mass + nl(u))))


def newton_solve(
    op: DiscreteOperator,
    nl: Nonlinearity,
    u_init: ScalarField,
    tol: float = 1e-10,
    max_iter: int = 25,
) -> Tuple[ScalarField, float]:
    """Damped Newton for L u + M f(u) = 0, converged on the nodewise sup norm.

    A step t du is taken when the weighted residual drops by the Armijo factor
    and the energy does not rise beyond roundoff. After MAX_BACKTRACKS failed
    halvings the solve stops with NewtonDivergenceError.
    """
    if not tol > 0:
        raise DomainError("Newton tolerance must be positive")
    op._check(u_init)

    u = u_init.values.copy()
    magnitude = abs(op.stiffness)
    norm = _nodewise_norm(op, nl, u)
    history = [norm]
    logger.debug("newton: initial residual %.3e", norm)

    while norm > tol:
        if len(history) > max_iter:
            raise NewtonDivergenceError(history)
        rhs = -(op.stiffness @ u + op.mass * nl(u))
        step = _solve_jacobian(linearization(op, nl.derivative(u)), op.mass, rhs)

        weighted = float(np.linalg.norm(rhs))
        level = _energy(op, nl, u)
        # roundoff floor of E at u
        slack = ENERGY_SLACK * (
            0.5 * float(np.dot(np.abs(u), magnitude @ np.abs(u))) + float(np.dot(op.mass, np.abs(nl.primitive(u))))
        )

        t = 1.0
        for _ in range(MAX_BACKTRACKS + 1):
            trial = u + t * step
            trial_weighted = float(np.linalg.norm(op.stiffness @ trial + op.mass * nl(trial)))
            if (
                np.isfinite(trial_weighted)
                and trial_weighted <= (1.0 - ARMIJO * t) * weighted
                and _energy(op, nl, trial) <= level + slack
            ):
                break
            t *= 0.5
        else:
            logger.debug("newton: backtracking exhausted at iteration %d", len(history))
            raise NewtonDivergenceError(history + [_nodewise_norm(op, nl, trial)])

        u = trial
        norm = _nodewise_norm(op, nl, u)
        history.append(norm)
        logger.debug("newton: iteration %d, step %.3g, residual %.3e", len(history) - 1, t, norm)

    return u_init.with_values(u), norm


def principal_eigenpair(
    op: DiscreteOperator,
    potential: Potential,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> EigenPair:
    """Smallest eigenvalue of (-L - M F) phi = lambda M phi.

    Shift-invert Lanczos at sigma0 = -max|F| - 1, where the shifted pencil is
    positive definite, then Rayleigh quotient iteration.
    """
    F = _values(potential)
    if F.size != op.grid.size:
        raise DomainError("potential does not match the operator grid")
    n = op.grid.size
    B = sp.diags(op.mass).tocsc()
    A = (-op.stiffness - sp.diags(op.mass * F)).tocsc()
    sigma0 = -float(np.max(np.abs(F))) - 1.0

    try:
        values, vectors = eigsh(A, k=1, M=B, sigma=sigma0, which="LM", v0=np.ones(n), tol=tol * 1e-2, maxiter=max_iter * n)
    except (ArpackNoConvergence, ArpackError) as exc:
        raise EigenConvergenceError(f"shift-invert Lanczos did not converge: {exc}") from exc

    phi = vectors[:, 0]
    lam = float(values[0])
    scale = abs(A).sum(axis=1).max()
    iterations = 0

    def normalized(v):
        v = v / np.sqrt(np.dot(v * op.mass, v))
        return v if np.dot(v, op.mass) >= 0 else -v

    def residual_norm(v, lam):
        return float(np.linalg.norm(A @ v - lam * (op.mass * v)))

    phi = normalized(phi)
    lam = float(np.dot(A @ phi, phi))
    res = residual_norm(phi, lam)
    floor = 64.0 * np.finfo(float).eps * (scale * np.linalg.norm(phi) + abs(lam) * np.linalg.norm(op.mass * phi))
    target = max(tol * np.linalg.norm(op.mass * phi), floor)

    while res > target:
        iterations += 1
        if iterations > max_iter:
            raise EigenConvergenceError(f"Rayleigh quotient iteration did not converge in {max_iter} iterations", res)
        try:
            y = splu((A - lam * B).tocsc()).solve(op.mass * phi)
        except RuntimeError:
            # exactly singular: lam is an eigenvalue to working precision
            break
        if not np.all(np.isfinite(y)):
            break
        phi = normalized(y)
        new_lam = float(np.dot(A @ phi, phi))
        change = abs(new_lam - lam)
        lam = new_lam
        res = residual_norm(phi, lam)
        logger.debug("rqi: iteration %d, lambda %.12g, residual %.3e", iterations, lam, res)
        if change < tol and res <= target:
            break

    if np.any(phi <= 0):
        raise NotPrincipalError("not principal: eigenfunction changes sign, restart with new seed")
    return EigenPair(lam, ScalarField(op.grid, phi), res, iterations)


def rayleigh_quotient(op: DiscreteOperator, potential: Potential, q: ScalarField) -> float:
    op._check(q)
    F = _values(potential)
    v = q.values
    denominator = float(np.dot(op.mass * v, v))
    if denominator == 0.0:
        raise DomainError("Rayleigh quotient of the zero field")
    numerator = -float(np.dot(op.stiffness @ v, v)) - float(np.dot(op.mass * F * v, v))
    return numerator / denominator


def classify_stability(lambda1: float, tol: float = 1e-8) -> StabilityClass:
    if abs(lambda1) <= tol:
        return StabilityClass.UNDETERMINED
    return StabilityClass.STABLE if lambda1 > 0 else StabilityClass.UNSTABLE


def _step_record(op, nl, kappa, field, res, base, grid, profile, eig_tol) -> ContinuationStep:
    pair = principal_eigenpair(op, nl.derivative(field.values), tol=eig_tol)
    distortion = volume_distortion(BentTube(profile, kappa), grid) if kappa != 0.0 else 0.0
    return ContinuationStep(kappa, field, res, pair.eigenvalue, field.sup_distance(base), distortion)


def _secant_guess(kappa: float, field: ScalarField, previous, kappa_next: float) -> Optional[ScalarField]:
    """Linear extrapolation of the branch through the last two accepted steps."""
    if previous is None:
        return None
    kappa_prev, prev_field = previous
    ratio = (kappa_next - kappa) / (kappa - kappa_prev)
    return field.with_values(field.values + ratio * (field.values - prev_field.values))


def _corrector(op, nl, field: ScalarField, guess: Optional[ScalarField], tol: float, max_iter: int):
    if guess is not None:
        try:
            return newton_solve(op, nl, guess, tol=tol, max_iter=max_iter)
        except SolverError as exc:
            logger.debug("continuation: secant predictor failed (%s), restarting from the last point", exc)
    return newton_solve(op, nl, field, tol=tol, max_iter=max_iter)


def continue_in_kappa(
    profile: ProfileCurve,
    nl: Nonlinearity,
    base: ScalarField,
    kappa_target: float,
    steps: int = 16,
    tol: float = 1e-10,
    max_iter: int = 25,
    eig_tol: float = 1e-10,
) -> ContinuationTrace:
    """Track U_kappa from U_g along kappa_j = j kappa_target / steps.

    Each step is corrected by damped Newton from the secant prediction through
    the two previous points, falling back to the last accepted field. The
    trace stops at the first step whose principal eigenvalue is not positive,
    or after MAX_STEP_HALVINGS failed Newton solves; the last accepted kappa
    is the verified bound at this resolution.
    """
    if steps < 1:
        raise DomainError("continuation needs steps >= 1")
    grid = base.grid
    if abs(kappa_target) * profile.max_radius >= 1.0:
        raise SelfIntersectionError(kappa_target, profile.max_radius)

    trace = ContinuationTrace(kappa_target=float(kappa_target))
    op = assemble(profile, grid)
    field, res = newton_solve(op, nl, base, tol=tol, max_iter=max_iter)
    trace.steps.append(_step_record(op, nl, 0.0, field, res, base, grid, profile, eig_tol))
    logger.info("continuation: base lambda1 = %.6g", trace.last.lambda1)

    if kappa_target == 0.0:
        trace.completed = True
        return trace

    dk = kappa_target / steps
    kappa = 0.0
    previous = None
    halvings = 0
    while abs(kappa) < abs(kappa_target) * (1.0 - 1e-12):
        nxt = kappa + dk
        if abs(nxt) > abs(kappa_target):
            nxt = kappa_target
        try:
            op = assemble(BentTube(profile, nxt), grid)
            guess = _secant_guess(kappa, field, previous, nxt)
            candidate, res = _corrector(op, nl, field, guess, tol, max_iter)
            record = _step_record(op, nl, nxt, candidate, res, base, grid, profile, eig_tol)
        except SolverError as exc:
            if halvings < MAX_STEP_HALVINGS:
                halvings += 1
                dk *= 0.5
                logger.warning("continuation: %s at kappa=%.6g, halving step", exc, nxt)
                continue
            trace.stop_reason = f"solver failure at kappa={nxt:.6g}: {exc}"
            break
        if record.lambda1 <= 0:
            trace.stop_reason = f"principal eigenvalue {record.lambda1:.3e} <= 0 at kappa={nxt:.6g}"
            break
        trace.steps.append(record)
        previous = (kappa, field)
        field, kappa = candidate, nxt
        logger.debug(
            "continuation: kappa=%.6g residual=%.2e lambda1=%.6g gap=%.3e",
            nxt, record.residual, record.lambda1, record.sup_gap,
        )
    else:
        trace.completed = True

    if len(trace.steps) == 1:
        raise NoContinuationError(f"no continuation neighborhood found at this resolution ({trace.stop_reason})")
    if not trace.completed:
        logger.warning("continuation stopped early: %s", trace.stop_reason)
    logger.info("continuation: verified |kappa| up to %.6g", trace.kappa_bound)
    return trace
