from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from tubeshell.core.errors import DomainError, GridMismatchError


class Topology(Enum):
    NEUMANN = "neumann"
    PERIODIC = "periodic"


class SynthesisMode(Enum):
    CONTINUOUS = "continuous"
    DISCRETE_EXACT = "discrete_exact"

    @classmethod
    def from_string(cls, value: str) -> "SynthesisMode":
        try:
            return cls(value.lower())
        except ValueError:
            raise DomainError(f"unknown synthesis mode '{value}'") from None


class StabilityClass(Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class Grid2D:
    """Cell-centered grid on [0, length) x S^1.

    Nodes sit at s_i = (i + 1/2) h_s and theta_j = j h_theta, values are stored
    row-major with s outer.
    """

    n_s: int
    n_theta: int
    length: float
    s_topology: Topology = Topology.NEUMANN

    def __post_init__(self):
        if self.n_s < 8:
            raise DomainError(f"Grid2D needs n_s >= 8, got {self.n_s}")
        axisymmetric = self.n_theta == 1 and self.s_topology is Topology.NEUMANN
        if self.n_theta < 8 and not axisymmetric:
            raise DomainError(f"Grid2D needs n_theta >= 8 (or 1 on a Neumann interval), got {self.n_theta}")
        if not self.length > 0:
            raise DomainError("Grid2D length must be positive")

    @classmethod
    def interval(cls, n_s: int, n_theta: int, length: float) -> "Grid2D":
        return cls(n_s, n_theta, length, Topology.NEUMANN)

    @classmethod
    def periodic(cls, n_s: int, n_theta: int, period: float) -> "Grid2D":
        return cls(n_s, n_theta, period, Topology.PERIODIC)

    @property
    def is_periodic(self) -> bool:
        return self.s_topology is Topology.PERIODIC

    @property
    def h_s(self) -> float:
        return self.length / self.n_s

    @property
    def h_theta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def size(self) -> int:
        return self.n_s * self.n_theta

    @property
    def shape(self):
        return (self.n_s, self.n_theta)

    @property
    def s_nodes(self) -> np.ndarray:
        return (np.arange(self.n_s) + 0.5) * self.h_s

    @property
    def theta_nodes(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.h_theta

    def mesh(self):
        """Node coordinates as two (n_s, n_theta) arrays."""
        return np.meshgrid(self.s_nodes, self.theta_nodes, indexing="ij")


@dataclass
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).reshape(-1)
        if self.values.size != self.grid.size:
            raise GridMismatchError(f"field has {self.values.size} values, grid expects {self.grid.size}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("ScalarField values must be finite")

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> "ScalarField":
        S, T = grid.mesh()
        return cls(grid, np.broadcast_to(func(S, T), grid.shape))

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.size, float(value)))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def sup_distance(self, other: "ScalarField") -> float:
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")
        return float(np.max(np.abs(self.values - other.values)))


@dataclass
class EigenPair:
    eigenvalue: float
    eigenfunction: ScalarField
    residual: float = 0.0
    iterations: int = 0


@dataclass
class ContinuationStep:
    kappa: float
    field: ScalarField
    residual: float
    lambda1: float
    sup_gap: float
    volume_distortion: float = 0.0


@dataclass
class ContinuationTrace:
    steps: List[ContinuationStep] = field(default_factory=list)
    kappa_target: float = 0.0
    completed: bool = False
    stop_reason: Optional[str] = None

    @property
    def kappa_bound(self) -> float:
        """Largest |kappa| verified along the trace (resolution dependent)."""
        return abs(self.steps[-1].kappa) if self.steps else 0.0

    @property
    def last(self) -> ContinuationStep:
        return self.steps[-1]


@dataclass
class Trajectory:
    times: np.ndarray
    deviations: np.ndarray
    snapshots: Optional[List[np.ndarray]] = None
    final: Optional[ScalarField] = None

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviations))

    @property
    def final_deviation(self) -> float:
        return float(self.deviations[-1])
