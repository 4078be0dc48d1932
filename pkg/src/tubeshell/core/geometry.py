"""Profile curves, bent tubes M_kappa and glued genus-1 surfaces.

Coordinates are (s, theta) on [0, l] x S^1 for a single tube and on
[0, P) x S^1, P = 2 n l, for the glued surface. A bare ProfileCurve stands for
the straight surface of revolution D (kappa = 0).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from tubeshell.core.errors import (
    ArcProfileError,
    ContinuationBoundError,
    DomainError,
    GeometryError,
    SelfIntersectionError,
)
from tubeshell.profiles.base import ProfileCurve
from tubeshell.profiles.spline import SplineProfile

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-4
ADMISSIBILITY_TOL = 1e-8
MARGIN_SCAN_POINTS = 1024


@dataclass(frozen=True)
class ArcProfile:
    """Arclength-parametrized meridian (psi(r), chi(r)), r in [0, L]."""

    psi: Callable
    chi: Callable
    dpsi: Callable
    dchi: Callable
    length: float
    d2psi: Optional[Callable] = None


@dataclass(frozen=True)
class BentTube:
    profile: ProfileCurve
    kappa: float

    def __post_init__(self):
        if abs(self.kappa) * self.profile.max_radius >= 1.0:
            raise SelfIntersectionError(self.kappa, self.profile.max_radius)

    @property
    def length(self) -> float:
        return self.profile.length

    def radius(self, s, nu: int = 0):
        return self.profile(s, nu)


@dataclass(frozen=True)
class GluedSurface:
    """2n reflected copies of M_kappa whose center arcs close into a circle."""

    profile: ProfileCurve
    n: int
    kappa: float
    period: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "period", 2.0 * self.n * self.profile.length)
        if abs(self.period * self.kappa - 2.0 * np.pi) > 1e-12:
            raise GeometryError("center curve does not close: 2 n l kappa != 2 pi")
        if abs(self.kappa) * self.profile.max_radius >= 1.0:
            raise SelfIntersectionError(self.kappa, self.profile.max_radius)

    @property
    def length(self) -> float:
        return self.period

    @property
    def junctions(self) -> np.ndarray:
        """Global s of the 2n junction circles."""
        return np.arange(2 * self.n) * self.profile.length

    def fold(self, s):
        """Map global s to (piece coordinate in [0, l], reflected flag)."""
        l = self.profile.length
        t = np.mod(np.asarray(s, dtype=float), 2.0 * l)
        reflected = t > l
        return np.where(reflected, 2.0 * l - t, t), reflected

    def radius(self, s, nu: int = 0):
        """Even 2l-periodic extension Psi_G and its derivatives."""
        folded, reflected = self.fold(s)
        values = self.profile(folded, nu)
        if nu % 2 == 1:
            values = np.where(reflected, -values, values)
        return values


Surface = Union[ProfileCurve, BentTube, GluedSurface]


def surface_radius_and_kappa(surface: Surface):
    """(radius callable, kappa) for any of the three surface families."""
    if isinstance(surface, GluedSurface):
        return surface.radius, surface.kappa
    if isinstance(surface, BentTube):
        return surface.radius, surface.kappa
    if isinstance(surface, ProfileCurve):
        return surface, 0.0
    raise DomainError(f"unsupported surface type {type(surface).__name__}")


# --- profiles -------------------------------------------------------------

def reparametrize_arc(arc: ArcProfile, samples: int = 512) -> SplineProfile:
    """Rewrite the meridian as a graph radius Psi(s) = psi(chi^{-1}(s))."""
    r = np.linspace(0.0, arc.length, samples)
    psi = np.asarray(arc.psi(r), dtype=float) * np.ones_like(r)
    dpsi = np.asarray(arc.dpsi(r), dtype=float) * np.ones_like(r)
    dchi = np.asarray(arc.dchi(r), dtype=float) * np.ones_like(r)

    if np.any(psi <= 0):
        raise ArcProfileError("psi must be positive on [0, L]")
    if np.any(dchi <= 0):
        raise ArcProfileError("as1 violated: chi' must be positive on [0, L]")
    defect = np.max(np.abs(dpsi**2 + dchi**2 - 1.0))
    if defect > 1e-10:
        raise ArcProfileError(f"arclength identity violated: max |psi'^2 + chi'^2 - 1| = {defect:.3e}")

    l = float(arc.chi(arc.length)) - float(arc.chi(0.0))
    s_knots = np.linspace(0.0, l, samples)
    r_of_s = arc_position(arc, s_knots)

    values = np.asarray(arc.psi(r_of_s), dtype=float) * np.ones_like(r_of_s)
    logger.debug("reparametrized arc: L=%g -> l=%g with %d knots", arc.length, l, samples)
    return SplineProfile(s_knots, values)


def arc_position(arc: ArcProfile, s) -> np.ndarray:
    """r(s) with chi(r) - chi(0) = s, for chi increasing on [0, L]."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    chi0 = float(arc.chi(0.0))
    l = float(arc.chi(arc.length)) - chi0
    slack = 1e-12 * max(1.0, l)
    if np.any(s < -slack) or np.any(s > l + slack):
        raise DomainError(f"s outside [0, {l:g}]")
    s = np.clip(s, 0.0, l)
    r = np.empty_like(s)
    for k, target in enumerate(s):
        if target == 0.0:
            r[k] = 0.0
        elif target == l:
            r[k] = arc.length
        else:
            r[k] = brentq(lambda x: float(arc.chi(x)) - chi0 - target, 0.0, arc.length, xtol=1e-14)
    return r


def arclength(profile: ProfileCurve, s: float) -> float:
    """r(s) = int_0^s sqrt(1 + Psi'(t)^2) dt."""
    value, _ = quad(lambda t: np.sqrt(1.0 + float(profile(t, 1)) ** 2), 0.0, s, epsabs=1e-13, epsrel=1e-13, limit=200)
    return value


def arc_criterion(arc: ArcProfile, r) -> np.ndarray:
    """(psi'/psi)'(r); positivity at an interior point yields patterns on D."""
    r = np.asarray(r, dtype=float)
    psi, dpsi = arc.psi(r), arc.dpsi(r)
    if arc.d2psi is not None:
        d2psi = arc.d2psi(r)
    else:
        h = 1e-5 * arc.length
        d2psi = (arc.dpsi(r + h) - arc.dpsi(r - h)) / (2.0 * h)
    return d2psi / psi - (dpsi / psi) ** 2


def stability_margin(profile: ProfileCurve, s0: float) -> float:
    """Psi'' Psi - Psi'^2 (1 + Psi'^2) at s0; positive somewhere means patterns exist."""
    if not 0.0 < s0 < profile.length:
        raise DomainError(f"s0 = {s0} outside (0, {profile.length})")
    psi, d1, d2, _ = profile.derivatives(s0)
    return float(d2 * psi - d1**2 * (1.0 + d1**2))


def find_best_s0(profile: ProfileCurve):
    """(s0, margin) maximizing the criterion over an interior scan."""
    s = profile.length * np.arange(1, MARGIN_SCAN_POINTS) / MARGIN_SCAN_POINTS
    psi, d1, d2, _ = profile.derivatives(s)
    margins = d2 * psi - d1**2 * (1.0 + d1**2)
    best = int(np.argmax(margins))
    return float(s[best]), float(margins[best])


@dataclass
class AdmissibilityReport:
    min_radius: float
    endpoint_derivatives: Dict[str, float]
    best_s0: float
    best_margin: float
    tolerance: float = ADMISSIBILITY_TOL
    messages: List[str] = field(default_factory=list)

    @property
    def radius_ok(self) -> bool:
        return self.min_radius > 0

    @property
    def endpoints_ok(self) -> bool:
        return all(abs(v) <= self.tolerance for v in self.endpoint_derivatives.values())

    @property
    def criterion_ok(self) -> bool:
        return self.best_margin > self.tolerance

    @property
    def passed(self) -> bool:
        return self.radius_ok and self.endpoints_ok and self.criterion_ok


def check_admissibility(profile: ProfileCurve) -> AdmissibilityReport:
    l = profile.length
    endpoints = {
        "d1_start": float(profile(0.0, 1)),
        "d3_start": float(profile(0.0, 3)),
        "d1_end": float(profile(l, 1)),
        "d3_end": float(profile(l, 3)),
    }
    s0, margin = find_best_s0(profile)
    report = AdmissibilityReport(
        min_radius=min(profile.min_radius, float(profile(0.0)), float(profile(l))),
        endpoint_derivatives=endpoints,
        best_s0=s0,
        best_margin=margin,
    )
    if not report.radius_ok:
        report.messages.append("Psi must be positive on [0, l]")
    for key, value in endpoints.items():
        if abs(value) > report.tolerance:
            report.messages.append(f"endpoint condition failed: {key} = {value:.3e}")
    if not report.criterion_ok:
        report.messages.append(f"criterion not satisfied: best margin {margin:.6g} at s0 = {s0:.6g}")
    return report


# --- bent tube ------------------------------------------------------------

def phi(surface: Surface, s, theta) -> np.ndarray:
    """Metric factor Phi = sqrt(Psi'^2 + (kappa Psi cos(theta) - 1)^2)."""
    radius, kappa = surface_radius_and_kappa(surface)
    psi, d1 = radius(s, 0), radius(s, 1)
    return np.sqrt(d1**2 + (kappa * psi * np.cos(theta) - 1.0) ** 2)


def metric(surface: Surface, s, theta):
    """Diagonal metric coefficients (g11, g22) = (Phi^2, Psi^2)."""
    radius, _ = surface_radius_and_kappa(surface)
    return phi(surface, s, theta) ** 2, np.broadcast_to(radius(s, 0) ** 2, np.broadcast(s, theta).shape)


def volume_distortion(tube: BentTube, grid) -> float:
    """max |dV_{g^kappa} / dV_g - 1| over the grid nodes."""
    S, T = grid.mesh()
    ratio = phi(tube, S, T) / phi(tube.profile, S, T)
    return float(np.max(np.abs(ratio - 1.0)))


def frenet_frame(kappa: float, s):
    x = kappa * np.asarray(s, dtype=float)
    zero, one = np.zeros_like(x), np.ones_like(x)
    tangent = np.stack([np.sin(x), zero, np.cos(x)], axis=-1)
    normal = np.stack([np.cos(x), zero, -np.sin(x)], axis=-1)
    binormal = np.stack([zero, one, zero], axis=-1)
    return tangent, normal, binormal


def center_curve(kappa: float, s) -> np.ndarray:
    """p(s) on the circular arc C(kappa); Taylor series for |kappa s| < 1e-4."""
    s = np.asarray(s, dtype=float)
    x = kappa * s
    small = np.abs(x) < SERIES_THRESHOLD
    k = kappa if kappa != 0 else 1.0
    x1_series = s * (x / 2.0 - x**3 / 24.0 + x**5 / 720.0 - x**7 / 40320.0)
    x3_series = s * (1.0 - x**2 / 6.0 + x**4 / 120.0 - x**6 / 5040.0)
    x1 = np.where(small, x1_series, (1.0 - np.cos(x)) / k)
    x3 = np.where(small, x3_series, np.sin(x) / k)
    return np.stack([x1, np.zeros_like(x), x3], axis=-1)


def _sweep(radius, kappa, s, theta) -> np.ndarray:
    s, theta = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(theta, dtype=float))
    _, normal, binormal = frenet_frame(kappa, s)
    psi = radius(s, 0)[..., None]
    return (
        center_curve(kappa, s)
        + psi * np.cos(theta)[..., None] * normal
        + psi * np.sin(theta)[..., None] * binormal
    )


def embed_tube(tube: Union[BentTube, ProfileCurve], s, theta) -> np.ndarray:
    """Point(s) of M_kappa in R^3, shape (..., 3)."""
    radius, kappa = surface_radius_and_kappa(tube)
    return _sweep(radius, kappa, s, theta)


def embed_glued(glued: GluedSurface, s, theta) -> np.ndarray:
    """Point(s) of the glued surface; P-periodic in s."""
    return _sweep(glued.radius, glued.kappa, s, theta)


def glue(profile: ProfileCurve, n: int, kappa_bound: Optional[float] = None) -> GluedSurface:
    if n < 2:
        raise DomainError("n >= 2 required")
    kappa = np.pi / (n * profile.length)
    if kappa * profile.max_radius >= 1.0:
        raise SelfIntersectionError(kappa, profile.max_radius)
    if kappa_bound is not None and kappa >= kappa_bound:
        raise ContinuationBoundError(kappa, kappa_bound)
    logger.info("gluing %d copies of M_* (kappa = %.6g, period = %.6g)", n, kappa, 2 * n * profile.length)
    return GluedSurface(profile, n, kappa)


def minimal_copies(profile: ProfileCurve, kappa_bound: float, safety: float = 0.8) -> int:
    """Smallest n >= 2 with pi / (n l) <= safety * kappa_bound."""
    if kappa_bound <= 0:
        raise ContinuationBoundError(0.0, kappa_bound)
    n = max(2, int(np.ceil(np.pi / (profile.length * safety * kappa_bound))))
    while np.pi / (n * profile.length) > safety * kappa_bound:
        n += 1
    return n
