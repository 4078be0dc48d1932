"""Reaction terms f that make a prescribed monotone profile U_g stationary on D."""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from tubeshell.core.errors import DomainError, StiffSynthesisWarning, SynthesisError
from tubeshell.core.models import Grid2D, ScalarField, SynthesisMode
from tubeshell.profiles.base import ProfileCurve

logger = logging.getLogger(__name__)

CONTINUOUS_KNOTS = 512
STIFF_THRESHOLD = 1e6


@dataclass(frozen=True)
class PatternProfile:
    """Monotone pattern with U'(s) = beta sin^p(pi s / l) and U(0) = 0."""

    length: float
    beta: float
    exponent: int

    def __call__(self, s, nu: int = 0):
        s = np.asarray(s, dtype=float)
        l, beta, p = self.length, self.beta, self.exponent
        x = np.pi * s / l
        w = np.pi / l
        if nu == 0:
            if p == 2:
                return beta * (s / 2.0 - l * np.sin(2.0 * x) / (4.0 * np.pi))
            return beta * l / (4.0 * np.pi) * (-3.0 * np.cos(x) + np.cos(3.0 * x) / 3.0 + 8.0 / 3.0)
        if nu == 1:
            return beta * np.sin(x) ** p
        if nu == 2:
            return beta * p * np.sin(x) ** (p - 1) * np.cos(x) * w
        if nu == 3:
            return beta * w**2 * p * ((p - 1) * np.sin(x) ** (p - 2) * np.cos(x) ** 2 - np.sin(x) ** p)
        raise DomainError(f"derivative order {nu} not supported")


def make_pattern_profile(length: float, beta: float, exponent: int) -> PatternProfile:
    if exponent not in (2, 3):
        raise DomainError(f"pattern exponent must be 2 or 3, got {exponent}")
    if not beta > 0:
        raise DomainError("pattern amplitude beta must be positive")
    if not length > 0:
        raise DomainError("pattern length must be positive")
    return PatternProfile(float(length), float(beta), int(exponent))


def pattern_field(pattern: PatternProfile, grid: Grid2D) -> ScalarField:
    """U_g sampled at the grid nodes (constant in theta)."""
    return ScalarField.from_function(grid, lambda S, T: pattern(S))


class Nonlinearity:
    """C^1 reaction term: cubic Hermite on a monotone knot table, linear outside."""

    def __init__(self, knots, values, slopes):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        slopes = np.asarray(slopes, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or knots.shape != values.shape or knots.shape != slopes.shape:
            raise DomainError("nonlinearity table needs matching 1-D arrays with at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise SynthesisError("non-monotone pattern: knot values are not strictly increasing")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(slopes))):
            raise SynthesisError("nonlinearity table contains non-finite entries")
        self.knots = knots
        self.values = values
        self.slopes = slopes
        self._spline = CubicHermiteSpline(knots, values, slopes, extrapolate=False)
        self._dspline = self._spline.derivative()
        self._antiderivative = self._spline.antiderivative()

    @classmethod
    def affine(cls, slope: float, intercept: float = 0.0) -> "Nonlinearity":
        knots = np.array([-1.0, 1.0])
        return cls(knots, intercept + slope * knots, np.full(2, float(slope)))

    @property
    def range(self):
        return float(self.knots[0]), float(self.knots[-1])

    def _knot_hits(self, u):
        idx = np.clip(np.searchsorted(self.knots, u), 0, self.knots.size - 1)
        return idx, self.knots[idx] == u

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        out = self._spline(np.clip(u, lo, hi))
        out = np.where(u < lo, self.values[0] + self.slopes[0] * (u - lo), out)
        out = np.where(u > hi, self.values[-1] + self.slopes[-1] * (u - hi), out)
        idx, hit = self._knot_hits(u)
        out = np.where(hit, self.values[idx], out)
        return float(out) if out.ndim == 0 else out

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        out = self._dspline(np.clip(u, lo, hi))
        out = np.where(u < lo, self.slopes[0], out)
        out = np.where(u > hi, self.slopes[-1], out)
        idx, hit = self._knot_hits(u)
        out = np.where(hit, self.slopes[idx], out)
        return float(out) if out.ndim == 0 else out

    def primitive(self, u):
        """G(u) with G' = f and G(knots[0]) = 0; quadratic outside the table."""
        u = np.asarray(u, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        out = self._antiderivative(np.clip(u, lo, hi))
        below, above = u - lo, u - hi
        out = np.where(u < lo, self.values[0] * below + 0.5 * self.slopes[0] * below**2, out)
        top = float(self._antiderivative(hi))
        out = np.where(u > hi, top + self.values[-1] * above + 0.5 * self.slopes[-1] * above**2, out)
        return float(out) if out.ndim == 0 else out

    def lipschitz(self, lo: float, hi: float, samples: int = 2001) -> float:
        u = np.linspace(lo, hi, samples)
        return float(np.max(np.abs(self.derivative(np.concatenate([u, self.knots[(self.knots >= lo) & (self.knots <= hi)]])))))


def eval_f(nl: Nonlinearity, u):
    return nl(u)


def eval_fprime(nl: Nonlinearity, u):
    return nl.derivative(u)


def reaction_along_profile(profile: ProfileCurve, pattern: PatternProfile, s):
    """f[U(s)] from the stationarity identity on D, and its s-derivative."""
    psi, d1, d2, d3 = profile.derivatives(s)
    u1, u2, u3 = pattern(s, 1), pattern(s, 2), pattern(s, 3)

    e = 1.0 + d1**2
    de = 2.0 * d1 * d2

    n1 = d1 * u1 + psi * u2
    dn1 = d2 * u1 + 2.0 * d1 * u2 + psi * u3
    den1 = psi * e
    dden1 = d1 * e + psi * de

    n2 = d1 * d2 * u1
    dn2 = d2**2 * u1 + d1 * d3 * u1 + d1 * d2 * u2
    den2 = e**2
    dden2 = 2.0 * e * de

    f = -n1 / den1 + n2 / den2
    df = -(dn1 * den1 - n1 * dden1) / den1**2 + (dn2 * den2 - n2 * dden2) / den2**2
    return f, df


def _endpoint_slope(profile, pattern, s_end: float, inward: float, secant: float) -> float:
    """One-sided limit of f'(u) = (df/ds) / U' at an endpoint, by Richardson extrapolation."""
    h = 1e-3 * profile.length
    g = []
    for step in (h, h / 2.0):
        s = s_end + inward * step
        _, df = reaction_along_profile(profile, pattern, s)
        g.append(float(df / pattern(s, 1)))
    limit = 2.0 * g[1] - g[0]
    if not np.isfinite(limit) or abs(limit) > STIFF_THRESHOLD:
        warnings.warn(
            f"stiff synthesis: f' endpoint limit {limit:.3e} at s = {s_end:g}; using the end-interval secant",
            StiffSynthesisWarning,
            stacklevel=3,
        )
        return secant
    return limit


def synthesize_f(
    profile: ProfileCurve,
    pattern: PatternProfile,
    mode: SynthesisMode = SynthesisMode.CONTINUOUS,
    grid: Optional[Grid2D] = None,
    knots: int = CONTINUOUS_KNOTS,
) -> Nonlinearity:
    if abs(profile.length - pattern.length) > 1e-12 * profile.length:
        raise DomainError("profile and pattern must share the length l")

    if mode is SynthesisMode.DISCRETE_EXACT:
        if grid is None:
            raise DomainError("discrete_exact synthesis needs a grid")
        return _synthesize_discrete(profile, pattern, grid)

    l = profile.length
    s = np.linspace(0.0, l, max(knots, CONTINUOUS_KNOTS))
    interior = s[1:-1]
    if np.any(pattern(interior, 1) <= 0):
        raise SynthesisError("non-monotone pattern: U' <= 0 in the interior")
    u = pattern(s)
    f, df = reaction_along_profile(profile, pattern, s)

    slopes = np.empty_like(s)
    slopes[1:-1] = df[1:-1] / pattern(interior, 1)
    slopes[0] = _endpoint_slope(profile, pattern, 0.0, 1.0, (f[1] - f[0]) / (u[1] - u[0]))
    slopes[-1] = _endpoint_slope(profile, pattern, l, -1.0, (f[-1] - f[-2]) / (u[-1] - u[-2]))
    logger.debug("continuous synthesis: %d knots, f in [%.4g, %.4g]", s.size, f.min(), f.max())
    return Nonlinearity(u, f, slopes)


def _synthesize_discrete(profile: ProfileCurve, pattern: PatternProfile, grid: Grid2D) -> Nonlinearity:
    from tubeshell.core.operators import apply, assemble

    if grid.is_periodic or abs(grid.length - profile.length) > 1e-12 * profile.length:
        raise DomainError("discrete_exact synthesis needs a Neumann grid on [0, l]")
    field = pattern_field(pattern, grid)
    laplacian = apply(assemble(profile, grid), field).as_array()[:, 0]
    u = field.as_array()[:, 0]
    if np.any(np.diff(u) <= 0):
        raise SynthesisError("non-monotone pattern: grid values are not strictly increasing")
    f = -laplacian
    slopes = PchipInterpolator(u, f).derivative()(u)
    logger.debug("discrete synthesis on %d rows: f in [%.4g, %.4g]", u.size, f.min(), f.max())
    return Nonlinearity(u, f, slopes)
