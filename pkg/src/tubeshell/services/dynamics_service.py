"""Time stepping of du/dt = Delta u + f(u) and Lyapunov stability runs."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from tubeshell.core.errors import DomainError, IntegrationError
from tubeshell.core.models import EigenPair, Grid2D, ScalarField, Trajectory
from tubeshell.core.nonlinearity import Nonlinearity
from tubeshell.core.operators import DiscreteOperator

logger = logging.getLogger(__name__)

MAX_TIME_STEP = 1e-2
RECORDS_PER_RUN = 100
CG_RTOL = 1e-12
WINDOW_SAMPLES = 33
ORDER_TOL = 1e-9
DECAY_AMPLITUDE = 1e-5
DECAY_TIME_STEP = 2.5e-4
DECAY_TOLERANCE = 0.15

Observer = Callable[[int, float, np.ndarray], None]


def stabilization_for(nl: Nonlinearity, U: ScalarField, delta: float) -> np.ndarray:
    """Nodewise c_i >= max(0, -f') over [U_i - 2 delta, U_i + 2 delta]."""
    offsets = np.linspace(-2.0 * delta, 2.0 * delta, WINDOW_SAMPLES)
    slopes = nl.derivative(U.values[:, None] + offsets[None, :])
    return np.maximum(0.0, -np.min(slopes, axis=1))


def default_time_step(nl: Nonlinearity, U: ScalarField, delta: float) -> float:
    """min(1e-2, 0.5 / Lip+) with Lip+ the largest positive f' on the range of U +- 2 delta."""
    lo, hi = float(U.values.min()) - 2.0 * delta, float(U.values.max()) + 2.0 * delta
    u = np.concatenate([np.linspace(lo, hi, 4001), nl.knots[(nl.knots >= lo) & (nl.knots <= hi)]])
    lip = float(np.max(nl.derivative(u)))
    if lip <= 0:
        return MAX_TIME_STEP
    return min(MAX_TIME_STEP, 0.5 / lip)


def integrate(
    op: DiscreteOperator,
    nl: Nonlinearity,
    u0: ScalarField,
    T: float,
    dt: float,
    reference: Optional[ScalarField] = None,
    stabilization: Optional[np.ndarray] = None,
    keep_snapshots: bool = False,
    observer: Optional[Observer] = None,
) -> Trajectory:
    """IMEX Euler: (M(1 + dt c) - dt L) u' = M (u + dt (f(u) + c u)).

    Deviations are measured in the sup norm against `reference` (u0 when
    omitted) and recorded every max(1, T / (100 dt)) steps.
    """
    if not dt > 0:
        raise DomainError("time step must be positive")
    if T < dt:
        raise DomainError("final time must be at least one time step")
    op._check(u0)
    reference = reference if reference is not None else u0
    op._check(reference)

    c = np.zeros(op.grid.size) if stabilization is None else np.asarray(stabilization, dtype=float)
    n_steps = int(np.ceil(T / dt - 1e-9))
    every = max(1, int(T / (RECORDS_PER_RUN * dt)))

    system = (sp.diags(op.mass * (1.0 + dt * c)) - dt * op.stiffness).tocsr()
    preconditioner = sp.diags(1.0 / system.diagonal())

    u = u0.values.copy()
    times = [0.0]
    deviations = [float(np.max(np.abs(u - reference.values)))]
    snapshots = [u.copy()] if keep_snapshots else None
    if observer is not None:
        observer(0, 0.0, u)

    for k in range(1, n_steps + 1):
        rhs = op.mass * (u + dt * (nl(u) + c * u))
        u, info = cg(system, rhs, x0=u, rtol=CG_RTOL, atol=0.0, M=preconditioner, maxiter=10 * op.grid.size)
        if info != 0:
            raise IntegrationError(k, f"conjugate gradient did not converge (info={info})")
        if not np.all(np.isfinite(u)):
            raise IntegrationError(k, "non-finite values")
        if k % every == 0 or k == n_steps:
            t = k * dt
            times.append(t)
            deviations.append(float(np.max(np.abs(u - reference.values))))
            if keep_snapshots:
                snapshots.append(u.copy())
            if observer is not None:
                observer(k, t, u)

    return Trajectory(np.asarray(times), np.asarray(deviations), snapshots, u0.with_values(u))


def measure_decay_rate(trajectory: Trajectory) -> float:
    """Exponential decay rate of the deviation over its first decade of decay."""
    d = trajectory.deviations
    t = trajectory.times
    if d[0] <= 0:
        raise DomainError("decay rate of a zero deviation is undefined")
    below = np.nonzero(d < d[0] / 10.0)[0]
    end = below[0] + 1 if below.size else d.size
    window = slice(0, end)
    mask = d[window] > 0
    if mask.sum() < 2:
        raise DomainError("not enough samples in the first decade of decay")
    slope, _ = np.polyfit(t[window][mask], np.log(d[window][mask]), 1)
    return float(-slope)


@dataclass
class DecayCheck:
    lambda1: float
    rate: float
    amplitude: float
    T: float
    dt: float

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.lambda1) / self.lambda1

    @property
    def passed(self) -> bool:
        return self.relative_error <= DECAY_TOLERANCE


def linear_decay_check(
    op: DiscreteOperator,
    nl: Nonlinearity,
    U: ScalarField,
    pair: EigenPair,
    amplitude: Optional[float] = None,
    T: Optional[float] = None,
    dt: float = DECAY_TIME_STEP,
) -> DecayCheck:
    """Start from U + amplitude phi / |phi|_inf and fit the decay rate of |u - U|_inf.

    In the linear regime the rate over the first decade is the principal
    eigenvalue; T defaults to twice the time one decade takes at that rate.
    """
    if not pair.eigenvalue > 0:
        raise DomainError(f"decay check needs a positive principal eigenvalue, got {pair.eigenvalue:.3e}")
    op._check(U)
    phi = pair.eigenfunction.values
    amplitude = amplitude if amplitude is not None else DECAY_AMPLITUDE * max(1.0, U.sup_norm())
    horizon = 2.0 * np.log(10.0) / pair.eigenvalue
    T = horizon if T is None else min(T, horizon)
    T = max(T, 2.0 * RECORDS_PER_RUN * dt)

    u0 = U.with_values(U.values + amplitude * phi / np.max(np.abs(phi)))
    c = stabilization_for(nl, U, amplitude)
    trajectory = integrate(op, nl, u0, T, dt, reference=U, stabilization=c)
    check = DecayCheck(pair.eigenvalue, measure_decay_rate(trajectory), amplitude, T, dt)
    logger.info(
        "decay check: rate %.6g against lambda1 %.6g (relative error %.3g)",
        check.rate, check.lambda1, check.relative_error,
    )
    return check


def random_smooth_field(grid: Grid2D, rng: np.random.Generator, modes: int = 8) -> ScalarField:
    """Truncated Fourier series with at most `modes` modes per direction, sup norm 1."""
    S, T = grid.mesh()
    values = np.zeros(grid.shape)
    theta_modes = modes if grid.n_theta > 1 else 1
    for a in range(modes):
        if grid.is_periodic:
            s_basis = [np.cos(2.0 * np.pi * a * S / grid.length), np.sin(2.0 * np.pi * a * S / grid.length)]
        else:
            s_basis = [np.cos(np.pi * a * S / grid.length)]
        for b in range(theta_modes):
            for sb in s_basis:
                for tb in (np.cos(b * T), np.sin(b * T)):
                    values += rng.standard_normal() / (1.0 + a + b) ** 2 * sb * tb
    peak = np.max(np.abs(values))
    if peak == 0:
        values = np.ones(grid.shape)
        peak = 1.0
    return ScalarField(grid, values / peak)


def reflect_rows(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    """Values under s -> -s (mod period), a junction reflection on glued grids."""
    return values.reshape(grid.shape)[::-1].reshape(-1)


@dataclass
class TrialResult:
    label: str
    max_deviation: float
    final_deviation: float
    passed: bool
    trajectory: Optional[Trajectory] = None


@dataclass
class StabilityReport:
    delta: float
    T: float
    dt: float
    trials: List[TrialResult] = field(default_factory=list)
    sandwich_ok: bool = True
    symmetry_defect: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        return max(t.max_deviation for t in self.trials)

    @property
    def final_deviation(self) -> float:
        return max(t.final_deviation for t in self.trials)

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.trials) and self.sandwich_ok


def _trial(label, traj, delta) -> TrialResult:
    ok = traj.max_deviation <= 2.0 * delta and traj.final_deviation <= delta / 10.0
    return TrialResult(label, traj.max_deviation, traj.final_deviation, ok, traj)


def stability_probe(
    op: DiscreteOperator,
    nl: Nonlinearity,
    U: ScalarField,
    delta: float,
    T: float,
    trials: int = 4,
    dt: Optional[float] = None,
    seed: int = 0,
    workers: int = 1,
) -> StabilityReport:
    """Perturb U by delta * eta and check that every trajectory returns.

    eta runs over +1, -1 and trials - 2 seeded random smooth fields. The
    random trajectories must stay between the -1 and +1 ones nodewise.
    """
    if not delta > 0:
        raise DomainError("stability run needs delta > 0")
    if trials < 2:
        raise DomainError("stability run needs at least the two constant trials")
    dt = dt if dt is not None else default_time_step(nl, U, delta)
    c = stabilization_for(nl, U, delta)
    report = StabilityReport(delta, T, dt)
    report.notes.append("PASS thresholds: max deviation <= 2 delta, final deviation <= delta/10 (conventions)")
    logger.info("stability run: delta=%.3g T=%g dt=%.3g trials=%d", delta, T, dt, trials)

    def run(u0, observer=None, keep=False):
        return integrate(op, nl, u0, T, dt, reference=U, stabilization=c, keep_snapshots=keep, observer=observer)

    upper = run(U.with_values(U.values + delta), keep=True)
    lower = run(U.with_values(U.values - delta), keep=True)
    report.trials += [_trial("+delta", upper, delta), _trial("-delta", lower, delta)]

    if op.grid.is_periodic:
        report.symmetry_defect = max(
            float(np.max(np.abs(traj.final.values - reflect_rows(op.grid, traj.final.values))))
            for traj in (upper, lower)
        )

    rng = np.random.default_rng(seed)
    etas = [random_smooth_field(op.grid, rng) for _ in range(trials - 2)]
    violations = []

    def run_random(index_eta):
        index, eta = index_eta
        record = iter(range(len(upper.times)))

        def check(k, t, u):
            r = next(record)
            if np.any(u < lower.snapshots[r] - ORDER_TOL) or np.any(u > upper.snapshots[r] + ORDER_TOL):
                violations.append((index, t))

        return _trial(f"random[{index}]", run(U.with_values(U.values + delta * eta.values), observer=check), delta)

    if workers > 1 and etas:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            report.trials += list(pool.map(run_random, enumerate(etas)))
    else:
        report.trials += [run_random(item) for item in enumerate(etas)]

    upper.snapshots = lower.snapshots = None
    report.sandwich_ok = not violations
    if violations:
        logger.warning("comparison ordering violated in %d samples", len(violations))
    logger.info("stability run: %s (max deviation %.3e)", "PASS" if report.passed else "FAIL", report.max_deviation)
    return report
