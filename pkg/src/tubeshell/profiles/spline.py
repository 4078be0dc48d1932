from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from tubeshell.core.errors import DomainError
from tubeshell.profiles.base import ProfileCurve

MIN_KNOTS = 512


class SplineProfile(ProfileCurve):
    """Tabulated profile interpolated by a natural cubic spline."""

    def __init__(self, s, psi):
        s = np.asarray(s, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if s.ndim != 1 or s.shape != psi.shape:
            raise DomainError("spline table needs matching 1-D arrays")
        if s.size < MIN_KNOTS:
            raise DomainError(f"spline table needs at least {MIN_KNOTS} knots, got {s.size}")
        if np.any(np.diff(s) <= 0):
            raise DomainError("spline knots must be strictly increasing")
        if abs(s[0]) > 1e-14:
            raise DomainError("spline table must start at s = 0")
        self.knots = s
        self.spline = CubicSpline(s, psi, bc_type="natural")
        self._length = float(s[-1])

    @classmethod
    def from_csv(cls, path: Path) -> "SplineProfile":
        """Load a two-column 's,psi' table with a header line."""
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(table[:, 0], table[:, 1])

    @property
    def length(self) -> float:
        return self._length

    def evaluate(self, s, nu=0):
        return self.spline(s, nu)
