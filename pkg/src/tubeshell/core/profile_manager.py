import logging
from pathlib import Path
from typing import Callable, Dict, Optional

from tubeshell.core.config_manager import ProfileSection
from tubeshell.core.errors import ConfigError, DomainError
from tubeshell.profiles.base import ProfileCurve
from tubeshell.profiles.closed_form import CosineProfile
from tubeshell.profiles.spline import SplineProfile

logger = logging.getLogger(__name__)


def _cosine(section: ProfileSection, amplitude: Optional[float]) -> ProfileCurve:
    A = section.A if amplitude is None else amplitude
    return CosineProfile(section.a, A, section.l)


def _spline(section: ProfileSection, amplitude: Optional[float]) -> ProfileCurve:
    path = Path(section.spline_file)
    if not path.is_file():
        raise ConfigError(f"profile.spline_file: no such file '{path}'")
    return SplineProfile.from_csv(path)


class ProfileManager:
    def __init__(self):
        # Register available profile families here
        self.families: Dict[str, Callable[[ProfileSection, Optional[float]], ProfileCurve]] = {
            "cosine": _cosine,
            "spline": _spline,
        }

    def family_for(self, section: ProfileSection) -> str:
        return "spline" if section.spline_file else "cosine"

    def build(self, section: ProfileSection, amplitude: Optional[float] = None) -> ProfileCurve:
        """Profile described by the config section; `amplitude` overrides A for the cosine family."""
        family = self.family_for(section)
        try:
            profile = self.families[family](section, amplitude)
        except DomainError as exc:
            raise ConfigError(f"profile: {exc}") from exc
        logger.debug("built %s profile: %r", family, profile)
        return profile

    def amplitude_scan(self, section: ProfileSection, amplitudes) -> list:
        """(A, profile) for each admissible amplitude; a spline profile has no family to scan."""
        if self.family_for(section) == "spline":
            return [(None, self.build(section))]
        out = []
        for A in [section.A] + [a for a in amplitudes if a != section.A]:
            if section.a > abs(A):
                out.append((A, self.build(section, A)))
        return out
