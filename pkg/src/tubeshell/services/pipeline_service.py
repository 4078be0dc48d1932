"""End-to-end construction: base pattern on D, continuation to M_kappa, gluing,
global pattern, and its stability and critical point checks."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from tubeshell.core.config_manager import Config
from tubeshell.core.errors import (
    DegenerateFieldError,
    GridMismatchError,
    PipelineError,
    SolverError,
    TubeshellError,
)
from tubeshell.core.geometry import (
    BentTube,
    GluedSurface,
    check_admissibility,
    glue,
    minimal_copies,
    volume_distortion,
)
from tubeshell.core.models import ContinuationTrace, Grid2D, ScalarField
from tubeshell.core.nonlinearity import Nonlinearity, PatternProfile, make_pattern_profile, pattern_field, synthesize_f
from tubeshell.core.operators import DiscreteOperator, assemble, partial_derivatives
from tubeshell.core.profile_manager import ProfileManager
from tubeshell.profiles.base import ProfileCurve
from tubeshell.services.dynamics_service import DecayCheck, StabilityReport, linear_decay_check, stability_probe
from tubeshell.services.solver_service import (
    classify_stability,
    continue_in_kappa,
    newton_solve,
    principal_eigenpair,
    residual,
)

logger = logging.getLogger(__name__)

GLOBAL_RESIDUAL_LIMIT = 1e-8


# --- report ---------------------------------------------------------------

class _ReportSection(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class BaseSummary(_ReportSection):
    profile: str
    beta: float
    p: int
    mode: str
    s0: float
    margin: float
    lambda1: float
    lambda1_axisymmetric: float
    residual: float
    stability: str
    grid: List[int]


class ContinuationRow(_ReportSection):
    kappa: float
    residual: float
    lambda1: float
    sup_gap: float
    volume_distortion: float


class ContinuationSummary(_ReportSection):
    kappa_target: float
    kappa0: float
    completed: bool
    stop_reason: Optional[str] = None
    max_residual: float
    steps: List[ContinuationRow]
    note: str = "kappa0 is the last verified curvature at this grid resolution"


class GlueSummary(_ReportSection):
    n: int
    kappa: float
    period: float
    safety: float
    consistent: bool
    newton_residual: float
    sup_gap: float
    theta_variation: float
    volume_distortion: float
    lambda1: float
    stability: str


class GlobalSummary(_ReportSection):
    grid: List[int]
    residual: float
    residual_limit: float = GLOBAL_RESIDUAL_LIMIT
    lambda1: float
    stability: str


class TrialSummary(_ReportSection):
    label: str
    max_deviation: float
    final_deviation: float
    passed: bool


class DynamicsSummary(_ReportSection):
    delta: float
    T: float
    dt: float
    max_deviation: float
    final_deviation: float
    sandwich_ok: bool
    symmetry_defect: Optional[float] = None
    passed: bool
    trials: List[TrialSummary]
    decay_rate: Optional[float] = None
    decay_lambda1: Optional[float] = None
    decay_relative_error: Optional[float] = None
    decay_ok: Optional[bool] = None
    notes: List[str] = []


class CriticalSummary(_ReportSection):
    count: int
    lower_bound: int
    tol_rel: float
    symmetry_points_covered: bool
    missing_symmetry_points: List[List[float]]
    locations: List[List[float]]


class Verdict(_ReportSection):
    passed: bool
    failed_stage: Optional[str] = None
    message: Optional[str] = None
    notes: List[str] = []


class VerificationReport(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    config: Dict[str, Dict[str, Any]]
    base: Optional[BaseSummary] = None
    continuation: Optional[ContinuationSummary] = None
    glue: Optional[GlueSummary] = None
    global_: Optional[GlobalSummary] = Field(None, alias="global")
    dynamics: Optional[DynamicsSummary] = None
    critical_points: Optional[CriticalSummary] = None
    verdict: Verdict = Verdict(passed=False)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, by_alias=True)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        return cls.model_validate_json(text)


# --- stage results --------------------------------------------------------

@dataclass
class BasePattern:
    profile: ProfileCurve
    pattern: PatternProfile
    nl: Nonlinearity
    field: ScalarField
    op: DiscreteOperator
    lambda1: float
    lambda1_axisymmetric: float
    residual: float
    s0: float
    margin: float


@dataclass
class CriticalPoints:
    count: int
    locations: List[Tuple[float, float]]
    symmetry_points: List[Tuple[float, float]] = field(default_factory=list)
    missing: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def symmetry_covered(self) -> bool:
        return not self.missing


@dataclass
class GluedPattern:
    surface: GluedSurface
    piece: ScalarField
    field: ScalarField
    op: DiscreteOperator
    newton_residual: float
    lambda1_piece: float


# --- operations -----------------------------------------------------------

def assemble_global_pattern(glued: GluedSurface, piece: ScalarField, grid: Optional[Grid2D] = None) -> ScalarField:
    """Even reflection of U_kappa across every junction: U(s, theta) = U_kappa(fold(s), theta)."""
    n_piece = piece.grid.n_s
    if piece.grid.is_periodic or abs(piece.grid.length - glued.profile.length) > 1e-12 * glued.profile.length:
        raise GridMismatchError("piece field must live on the Neumann grid of one tube")
    expected = Grid2D.periodic(2 * glued.n * n_piece, piece.grid.n_theta, glued.period)
    if grid is None:
        grid = expected
    elif grid.n_s != expected.n_s or grid.n_theta != expected.n_theta or grid.length != expected.length:
        raise GridMismatchError(
            f"global grid {grid.n_s}x{grid.n_theta} is not {2 * glued.n} x piece grid {n_piece}x{piece.grid.n_theta}"
        )
    rows = np.arange(grid.n_s) % (2 * n_piece)
    rows = np.where(rows < n_piece, rows, 2 * n_piece - 1 - rows)
    return ScalarField(grid, piece.as_array()[rows])


def _merge_periodic_labels(labels: np.ndarray, count: int, wrap_s: bool, wrap_theta: bool) -> Tuple[np.ndarray, int]:
    pairs = []
    if wrap_s:
        a, b = labels[0, :], labels[-1, :]
        pairs.append(np.stack([a, b], axis=1)[(a > 0) & (b > 0)])
    if wrap_theta:
        a, b = labels[:, 0], labels[:, -1]
        pairs.append(np.stack([a, b], axis=1)[(a > 0) & (b > 0)])
    edges = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int)
    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0] - 1, edges[:, 1] - 1)), shape=(count, count))
    merged, component = connected_components(graph, directed=False)
    out = np.where(labels > 0, component[np.maximum(labels, 1) - 1] + 1, 0)
    return out, merged


def _component_mask(d: np.ndarray, axis: int, tol_rel: float, periodic: bool) -> np.ndarray:
    """Nodes where the central difference along `axis` changes sign across the node or is below tolerance."""
    peak = np.max(np.abs(d))
    small = np.abs(d) <= tol_rel * peak
    if d.shape[axis] == 1:
        return small
    before = np.roll(d, 1, axis=axis)
    after = np.roll(d, -1, axis=axis)
    crossing = before * after < 0
    if not periodic:
        edge = [slice(None)] * 2
        edge[axis] = 0
        crossing[tuple(edge)] = False
        edge[axis] = -1
        crossing[tuple(edge)] = False
    return small | crossing


def count_critical_points(
    op: DiscreteOperator,
    U: ScalarField,
    tol_rel: float = 1e-4,
    glued: Optional[GluedSurface] = None,
) -> CriticalPoints:
    """Cluster the critical nodes of U (4-connectivity, periodic wrap) and count the clusters."""
    grid = op.grid
    u_s, u_t = partial_derivatives(op, U)
    if max(np.max(np.abs(u_s)), np.max(np.abs(u_t))) <= 1e-14 * (1.0 + U.sup_norm()):
        raise DegenerateFieldError("degenerate field: gradient vanishes identically")

    mask = _component_mask(u_s, 0, tol_rel, grid.is_periodic) & _component_mask(u_t, 1, tol_rel, True)
    labels, count = ndimage.label(mask)
    if count:
        labels, count = _merge_periodic_labels(labels, count, grid.is_periodic, grid.n_theta > 1)

    S, T = grid.mesh()
    grad = u_s**2 + u_t**2
    locations = []
    for label in range(1, count + 1):
        members = np.argwhere(labels == label)
        i, j = members[np.argmin(grad[members[:, 0], members[:, 1]])]
        locations.append((float(S[i, j]), float(T[i, j])))

    result = CriticalPoints(count, locations)
    if glued is not None:
        n_piece = grid.n_s // (2 * glued.n)
        theta_rows = [0] if grid.n_theta == 1 else [0, int(round(np.pi / grid.h_theta)) % grid.n_theta]
        for k in range(2 * glued.n):
            below, above = (k * n_piece - 1) % grid.n_s, k * n_piece
            for j in theta_rows:
                point = (float(k * glued.profile.length), float(grid.theta_nodes[j]))
                result.symmetry_points.append(point)
                if not (mask[below, j] or mask[above, j]):
                    result.missing.append(point)
    logger.info("critical points: %d clusters, %d symmetry points missing", count, len(result.missing))
    return result


def theta_variation(U: ScalarField) -> float:
    """max over s of (max_theta U - min_theta U)."""
    arr = U.as_array()
    return float(np.max(arr.max(axis=1) - arr.min(axis=1)))


class PipelineService:
    def __init__(self, config: Config, profile_manager: Optional[ProfileManager] = None):
        self.config = config
        self.profile_manager = profile_manager or ProfileManager()

    @property
    def piece_grid(self) -> Grid2D:
        return Grid2D.interval(self.config.grid.Ns, self.config.grid.Ntheta, self.config.profile.l)

    def _candidates(self):
        cfg = self.config.pattern
        betas = [cfg.beta] + [b for b in cfg.beta_values if b != cfg.beta]
        exponents = [cfg.p] + [p for p in (2, 3) if p != cfg.p]
        for A, profile in self.profile_manager.amplitude_scan(self.config.profile, cfg.amplitudes):
            report = check_admissibility(profile)
            if not report.passed:
                logger.debug("skipping A=%s: %s", A, "; ".join(report.messages))
                continue
            for p in exponents:
                for beta in betas:
                    yield profile, report, make_pattern_profile(profile.length, beta, p)

    def _try_candidate(self, profile, report, pattern) -> Optional[BasePattern]:
        cfg = self.config
        grid = self.piece_grid
        nl = synthesize_f(profile, pattern, cfg.pattern.synthesis_mode, grid=grid)
        axis_grid = Grid2D.interval(grid.n_s, 1, grid.length)
        axis_op = assemble(profile, axis_grid)
        try:
            axis_field, _ = newton_solve(
                axis_op, nl, pattern_field(pattern, axis_grid), cfg.continuation.tol, cfg.continuation.max_iter
            )
            lambda_axis = principal_eigenpair(axis_op, nl.derivative(axis_field.values)).eigenvalue
        except SolverError as exc:
            logger.info("candidate beta=%g p=%d %r rejected: %s", pattern.beta, pattern.exponent, profile, exc)
            return None
        logger.info("candidate beta=%g p=%d %r: axisymmetric lambda1 = %.6g", pattern.beta, pattern.exponent, profile, lambda_axis)
        if lambda_axis < cfg.pattern.lambda_min:
            return None
        op = assemble(profile, grid)
        U, res = newton_solve(op, nl, pattern_field(pattern, grid), cfg.continuation.tol, cfg.continuation.max_iter)
        lam = principal_eigenpair(op, nl.derivative(U.values)).eigenvalue
        return BasePattern(profile, pattern, nl, U, op, lam, lambda_axis, res, report.best_s0, report.best_margin)

    def build_base_pattern(self) -> BasePattern:
        primary = self.profile_manager.build(self.config.profile)
        report = check_admissibility(primary)
        if not report.passed:
            raise PipelineError("base", "profile is not admissible: " + "; ".join(report.messages))
        for profile, admissibility, pattern in self._candidates():
            base = self._try_candidate(profile, admissibility, pattern)
            if base is not None:
                logger.info("base pattern: lambda1 = %.6g (axisymmetric %.6g)", base.lambda1, base.lambda1_axisymmetric)
                return base
        raise PipelineError("base", "no stable base pattern at this resolution")

    def continue_base(self, base: BasePattern) -> ContinuationTrace:
        cfg = self.config.continuation
        return continue_in_kappa(base.profile, base.nl, base.field, cfg.kappa_target, cfg.steps, cfg.tol, cfg.max_iter)

    def choose_copies(self, profile: ProfileCurve, kappa0: float) -> int:
        forced = self.config.glue.n
        if forced is None:
            return minimal_copies(profile, kappa0, self.config.glue.safety)
        limit = np.pi / (profile.length * kappa0) if kappa0 > 0 else np.inf
        if not forced > limit:
            raise PipelineError(
                "glue", f"n = {forced} does not satisfy n > pi/(l kappa0) = {limit:.6g} (kappa0 = {kappa0:.6g})"
            )
        return forced

    def glue_pattern(self, base: BasePattern, trace: ContinuationTrace, n: int) -> GluedPattern:
        cfg = self.config.continuation
        surface = glue(base.profile, n, kappa_bound=trace.kappa_bound)
        same_sign = [s for s in trace.steps if s.kappa == 0.0 or np.sign(s.kappa) == np.sign(surface.kappa)]
        start = min(same_sign, key=lambda s: abs(abs(s.kappa) - surface.kappa)).field
        piece_op = assemble(BentTube(base.profile, surface.kappa), self.piece_grid)
        piece, res = newton_solve(piece_op, base.nl, start, cfg.tol, cfg.max_iter)
        lam_piece = principal_eigenpair(piece_op, base.nl.derivative(piece.values)).eigenvalue
        U = assemble_global_pattern(surface, piece)
        op = assemble(surface, U.grid)
        return GluedPattern(surface, piece, U, op, res, lam_piece)

    def run(self) -> Tuple[VerificationReport, Dict[str, Any]]:
        """Run every stage; the report names the first failing stage, artifacts collects the fields."""
        cfg = self.config
        report = VerificationReport(config=cfg.model_dump())
        artifacts: Dict[str, Any] = {}
        stage = "base"
        try:
            base = self.build_base_pattern()
            artifacts["base"] = base
            report.base = BaseSummary(
                profile=repr(base.profile), beta=base.pattern.beta, p=base.pattern.exponent,
                mode=cfg.pattern.mode, s0=base.s0, margin=base.margin, lambda1=base.lambda1,
                lambda1_axisymmetric=base.lambda1_axisymmetric, residual=base.residual,
                stability=classify_stability(base.lambda1).value, grid=[cfg.grid.Ns, cfg.grid.Ntheta],
            )

            stage = "continuation"
            trace = self.continue_base(base)
            artifacts["trace"] = trace
            report.continuation = ContinuationSummary(
                kappa_target=trace.kappa_target, kappa0=trace.kappa_bound, completed=trace.completed,
                stop_reason=trace.stop_reason, max_residual=max(s.residual for s in trace.steps),
                steps=[
                    ContinuationRow(kappa=s.kappa, residual=s.residual, lambda1=s.lambda1,
                                    sup_gap=s.sup_gap, volume_distortion=s.volume_distortion)
                    for s in trace.steps
                ],
            )

            stage = "glue"
            n = self.choose_copies(base.profile, trace.kappa_bound)
            glued = self.glue_pattern(base, trace, n)
            artifacts["glued"] = glued
            kappa = glued.surface.kappa
            report.glue = GlueSummary(
                n=n, kappa=kappa, period=glued.surface.period, safety=cfg.glue.safety,
                consistent=bool(kappa < trace.kappa_bound), newton_residual=glued.newton_residual,
                sup_gap=glued.piece.sup_distance(base.field), theta_variation=theta_variation(glued.piece),
                volume_distortion=volume_distortion(BentTube(base.profile, kappa), self.piece_grid),
                lambda1=glued.lambda1_piece, stability=classify_stability(glued.lambda1_piece).value,
            )

            stage = "global"
            global_residual = residual(glued.op, base.nl, glued.field).sup_norm()
            global_pair = principal_eigenpair(glued.op, base.nl.derivative(glued.field.values))
            global_lambda = global_pair.eigenvalue
            report.global_ = GlobalSummary(
                grid=[glued.field.grid.n_s, glued.field.grid.n_theta], residual=global_residual,
                lambda1=global_lambda, stability=classify_stability(global_lambda).value,
            )

            stage = "dynamics"
            dyn = cfg.dynamics
            stability = stability_probe(
                glued.op, base.nl, glued.field, dyn.delta * glued.field.sup_norm(), dyn.T,
                trials=dyn.trials, dt=dyn.dt, seed=dyn.seed, workers=dyn.workers,
            )
            artifacts["stability"] = stability
            decay = None
            if global_lambda > 0:
                decay = linear_decay_check(glued.op, base.nl, glued.field, global_pair, T=dyn.T)
                artifacts["decay"] = decay
            report.dynamics = _dynamics_summary(stability, decay)

            stage = "critical_points"
            critical = count_critical_points(glued.op, glued.field, cfg.critical.tol_rel, glued=glued.surface)
            artifacts["critical"] = critical
            report.critical_points = CriticalSummary(
                count=critical.count, lower_bound=4 * n, tol_rel=cfg.critical.tol_rel,
                symmetry_points_covered=critical.symmetry_covered,
                missing_symmetry_points=[list(p) for p in critical.missing],
                locations=[list(p) for p in critical.locations],
            )
        except TubeshellError as exc:
            stage = exc.stage if isinstance(exc, PipelineError) else stage
            logger.error("stage %s failed: %s", stage, exc)
            report.verdict = Verdict(passed=False, failed_stage=stage, message=str(exc))
            return report, artifacts

        report.verdict = _verdict(report)
        return report, artifacts


def _dynamics_summary(stability: StabilityReport, decay: Optional[DecayCheck] = None) -> DynamicsSummary:
    summary = DynamicsSummary(
        delta=stability.delta, T=stability.T, dt=stability.dt, max_deviation=stability.max_deviation,
        final_deviation=stability.final_deviation, sandwich_ok=stability.sandwich_ok,
        symmetry_defect=stability.symmetry_defect, passed=stability.passed,
        trials=[
            TrialSummary(label=t.label, max_deviation=t.max_deviation, final_deviation=t.final_deviation, passed=t.passed)
            for t in stability.trials
        ],
        notes=list(stability.notes),
    )
    if decay is not None:
        summary.decay_rate = decay.rate
        summary.decay_lambda1 = decay.lambda1
        summary.decay_relative_error = decay.relative_error
        summary.decay_ok = decay.passed
        summary.notes.append("linear decay along phi1 must match lambda1 within 15% over the first decade")
    return summary


def _verdict(report: VerificationReport) -> Verdict:
    checks = {
        "base": report.base.lambda1 > 0,
        "continuation": report.continuation.max_residual <= report.config["continuation"]["tol"],
        "glue": report.glue.consistent and report.glue.lambda1 > 0,
        "global": report.global_.residual <= GLOBAL_RESIDUAL_LIMIT and report.global_.lambda1 > 0,
        "dynamics": report.dynamics.passed and report.dynamics.decay_ok is not False,
        "critical_points": (
            report.critical_points.count >= report.critical_points.lower_bound
            and report.critical_points.symmetry_points_covered
        ),
    }
    failed = [name for name, ok in checks.items() if not ok]
    notes = [
        "kappa0 is resolution dependent",
        "n is the smallest integer with pi/(n l) <= safety * kappa0",
        "critical point count is a lower-bound check (>= 4n)",
    ]
    if failed:
        return Verdict(passed=False, failed_stage=failed[0], message="checks failed: " + ", ".join(failed), notes=notes)
    return Verdict(passed=True, notes=notes)


def run_verification(config: Config) -> VerificationReport:
    report, _ = PipelineService(config).run()
    return report
