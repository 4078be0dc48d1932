from pathlib import Path

import pytest

from tubeshell.core.config_manager import Config, load_config, parse_config, serialize_config
from tubeshell.core.errors import ConfigError
from tubeshell.core.models import SynthesisMode

DEFAULT_CFG = Path(__file__).resolve().parent.parent / "default.cfg"


def test_defaults():
    config = Config()
    assert config.profile.a == 1.0 and config.profile.A == 0.5 and config.profile.l == 1.0
    assert config.pattern.synthesis_mode is SynthesisMode.DISCRETE_EXACT
    assert config.grid.Ns == 128 and config.grid.Ntheta == 64
    assert config.continuation.kappa_target == 0.6
    assert config.glue.n is None and config.glue.safety == 0.8
    assert config.dynamics.dt is None and config.dynamics.trials == 4
    assert config.output.formats == ["json", "csv", "obj"]


def test_shipped_default_file_matches_defaults():
    assert load_config(DEFAULT_CFG) == Config()


def test_missing_path_gives_defaults():
    assert load_config() == Config()


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_values_and_comments():
    config = parse_config(
        "# header\n"
        "profile.A = 0.3   # thinner neck\n"
        "\n"
        "pattern.beta_values = 2, 4\n"
        "pattern.mode = continuous\n"
        "glue.n = auto\n"
        "dynamics.dt = 0.005\n"
        "output.formats = JSON, obj\n"
    )
    assert config.profile.A == 0.3
    assert config.pattern.beta_values == [2.0, 4.0]
    assert config.pattern.synthesis_mode is SynthesisMode.CONTINUOUS
    assert config.glue.n is None
    assert config.dynamics.dt == 0.005
    assert config.output.formats == ["json", "obj"]


def test_invalid_copy_count_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("glue.n = 0\n")
    assert info.value.line == 1
    assert "line 1" in str(info.value)
    assert "n >= 2 required" in str(info.value)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("profile.a = 1\nnonsense\n", 2, "syntax error"),
        ("profile = 1\n", 1, "section.key"),
        ("mesh.Ns = 4\n", 1, "unknown section"),
        ("grid.N = 4\n", 1, "unknown key"),
        ("grid.Ns = 32\n\ngrid.Ns = 64\n", 3, "duplicate key"),
        ("grid.Ntheta = 4\n", 1, "Ntheta"),
        ("pattern.p = 5\n", 1, "p must be 2 or 3"),
        ("pattern.mode = exact\n", 1, "unknown synthesis mode"),
        ("output.formats = csv, png\n", 1, "unknown output format"),
        ("profile.A = 2\n", 1, "a > |A|"),
    ],
)
def test_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert fragment in str(info.value)


def test_kappa_target_beyond_self_intersection():
    with pytest.raises(ConfigError, match="self-intersecting tube") as info:
        parse_config("profile.A = 0.5\ncontinuation.kappa_target = 0.7\n")
    assert info.value.line == 2


def test_round_trip():
    config = parse_config("profile.A = 0.4\nglue.n = 3\ndynamics.seed = 11\ncritical.tol_rel = 1e-3\n")
    text = serialize_config(config)
    assert parse_config(text) == config
    assert serialize_config(parse_config(text)) == text
    assert "glue.n = 3" in text
    assert "profile.spline_file = none" in text
    assert "dynamics.dt = auto" in text
