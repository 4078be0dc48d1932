from typing import List, Optional


class TubeshellError(Exception):
    """Base class for every error raised by tubeshell."""


class GeometryError(TubeshellError):
    pass


class ArcProfileError(GeometryError):
    pass


class SelfIntersectionError(GeometryError):
    def __init__(self, kappa: float, max_radius: float):
        self.kappa = kappa
        self.max_radius = max_radius
        super().__init__(
            f"self-intersecting tube: |kappa|*max(Psi) = {abs(kappa) * max_radius:.6g} >= 1"
        )


class ContinuationBoundError(GeometryError):
    def __init__(self, kappa: float, bound: float):
        self.kappa = kappa
        self.bound = bound
        super().__init__(
            f"curvature exceeds continuation bound: kappa = {kappa:.6g} >= kappa0 = {bound:.6g}"
        )


class DomainError(TubeshellError, ValueError):
    pass


class SynthesisError(TubeshellError):
    pass


class StiffSynthesisWarning(UserWarning):
    pass


class DegenerateMetricError(TubeshellError):
    pass


class GridMismatchError(TubeshellError):
    pass


class SolverError(TubeshellError):
    pass


class NewtonDivergenceError(SolverError):
    def __init__(self, history: List[float]):
        self.history = list(history)
        last = f"{history[-1]:.3e}" if history else "n/a"
        super().__init__(f"Newton did not converge in {len(history) - 1} iterations (last residual {last})")


class FoldDetectedError(SolverError):
    pass


class NoContinuationError(SolverError):
    pass


class EigenConvergenceError(SolverError):
    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        super().__init__(message)


class NotPrincipalError(SolverError):
    pass


class IntegrationError(TubeshellError):
    def __init__(self, step: int, reason: str):
        self.step = step
        super().__init__(f"time integration aborted at step {step}: {reason}")


class DegenerateFieldError(TubeshellError):
    pass


class PipelineError(TubeshellError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class ConfigError(TubeshellError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
