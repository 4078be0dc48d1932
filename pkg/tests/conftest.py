import numpy as np
import pytest

from tubeshell.core.geometry import glue
from tubeshell.core.models import Grid2D, SynthesisMode
from tubeshell.core.nonlinearity import make_pattern_profile, pattern_field, synthesize_f
from tubeshell.profiles.closed_form import CosineProfile


@pytest.fixture
def neck_profile():
    """Default family member: Psi = 1 + 0.5 cos(2 pi s), l = 1."""
    return CosineProfile(1.0, 0.5, 1.0)


@pytest.fixture
def cylinder():
    return CosineProfile(1.0, 0.0, 1.0)


@pytest.fixture
def thin_profile():
    """Thin enough to glue with few copies without self-intersection."""
    return CosineProfile(0.2, 0.05, 1.0)


@pytest.fixture
def pattern():
    return make_pattern_profile(1.0, 1.0, 2)


@pytest.fixture
def small_grid():
    return Grid2D.interval(32, 8, 1.0)


@pytest.fixture
def exact_setup(neck_profile, pattern, small_grid):
    """(profile, nl, U_g) with U_g an exact equilibrium of the small grid."""
    nl = synthesize_f(neck_profile, pattern, SynthesisMode.DISCRETE_EXACT, grid=small_grid)
    return neck_profile, nl, pattern_field(pattern, small_grid)


@pytest.fixture
def glued_thin(thin_profile):
    return glue(thin_profile, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
