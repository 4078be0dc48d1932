"""Line-oriented run configuration: `section.key = value`, '#' comments."""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from tubeshell.core.errors import ConfigError
from tubeshell.core.models import SynthesisMode
from tubeshell.utils.formatting import fmt

NONE_TOKENS = {"auto", "none", ""}
OUTPUT_FORMATS = ("json", "csv", "obj")


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _none_token(value):
    if isinstance(value, str) and value.strip().lower() in NONE_TOKENS:
        return None
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProfileSection(_Section):
    a: float = 1.0
    A: float = 0.5
    l: float = Field(1.0, gt=0)
    spline_file: Optional[str] = None

    @field_validator("spline_file", mode="before")
    @classmethod
    def check_spline_none(cls, v):
        return _none_token(v)

    @model_validator(mode="after")
    def check_positive_radius(self):
        if self.spline_file is None and not self.a > abs(self.A):
            raise ValueError("profile needs a > |A| so that Psi stays positive")
        return self


class PatternSection(_Section):
    beta: float = Field(1.0, gt=0)
    p: int = 2
    mode: str = "discrete_exact"
    beta_values: List[float] = [1.0, 2.0, 0.5]
    amplitudes: List[float] = [0.5, 0.6, 0.4, 0.3]
    lambda_min: float = Field(0.01, gt=0)

    @field_validator("beta_values", "amplitudes", mode="before")
    @classmethod
    def check_split(cls, v):
        return _split_list(v)

    @field_validator("p")
    @classmethod
    def check_exponent(cls, v):
        if v not in (2, 3):
            raise ValueError("p must be 2 or 3")
        return v

    @field_validator("mode")
    @classmethod
    def check_mode(cls, v):
        return SynthesisMode.from_string(v).value

    @field_validator("beta_values")
    @classmethod
    def check_betas(cls, v):
        if any(b <= 0 for b in v):
            raise ValueError("beta values must be positive")
        return v

    @property
    def synthesis_mode(self) -> SynthesisMode:
        return SynthesisMode(self.mode)


class GridSection(_Section):
    Ns: int = Field(128, ge=8)
    Ntheta: int = 64

    @field_validator("Ntheta")
    @classmethod
    def check_ntheta(cls, v):
        if v != 1 and v < 8:
            raise ValueError("Ntheta must be >= 8 (or 1 for axisymmetric runs)")
        return v


class ContinuationSection(_Section):
    kappa_target: float = 0.6
    steps: int = Field(16, ge=1)
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(25, ge=1)


class GlueSection(_Section):
    n: Optional[int] = None
    safety: float = Field(0.8, gt=0, le=1)

    @field_validator("n", mode="before")
    @classmethod
    def check_auto_n(cls, v):
        return _none_token(v)

    @field_validator("n")
    @classmethod
    def check_copies(cls, v):
        if v is not None and v < 2:
            raise ValueError("n >= 2 required")
        return v


class DynamicsSection(_Section):
    delta: float = Field(0.01, gt=0)
    T: float = Field(50.0, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    trials: int = Field(4, ge=2)
    seed: int = 0
    workers: int = Field(1, ge=1)

    @field_validator("dt", mode="before")
    @classmethod
    def check_auto_dt(cls, v):
        return _none_token(v)


class CriticalSection(_Section):
    tol_rel: float = Field(1e-4, gt=0, lt=1)


class OutputSection(_Section):
    directory: str = "tubeshell-out"
    formats: List[str] = list(OUTPUT_FORMATS)

    @field_validator("formats", mode="before")
    @classmethod
    def check_split(cls, v):
        return _split_list(v)

    @field_validator("formats")
    @classmethod
    def check_formats(cls, v):
        v = [item.lower() for item in v]
        unknown = [item for item in v if item not in OUTPUT_FORMATS]
        if unknown:
            raise ValueError(f"unknown output format(s) {', '.join(unknown)}")
        return v


class Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    profile: ProfileSection = ProfileSection()
    pattern: PatternSection = PatternSection()
    grid: GridSection = GridSection()
    continuation: ContinuationSection = ContinuationSection()
    glue: GlueSection = GlueSection()
    dynamics: DynamicsSection = DynamicsSection()
    critical: CriticalSection = CriticalSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def check_kappa_below_self_intersection(self):
        if self.profile.spline_file is None:
            bound = 1.0 / (self.profile.a + abs(self.profile.A))
            if abs(self.continuation.kappa_target) >= bound:
                raise ValueError(
                    f"self-intersecting tube: |kappa_target| must stay below 1/max(Psi) = {bound:.6g}"
                )
        return self


SECTIONS = {name: info.annotation for name, info in Config.model_fields.items()}


def _tokenize(text: str) -> Tuple[Dict[str, Dict[str, str]], Dict[Tuple[str, str], int]]:
    raw: Dict[str, Dict[str, str]] = {}
    lines: Dict[Tuple[str, str], int] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError("syntax error: expected 'section.key = value'", number)
        key, value = (part.strip() for part in content.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"syntax error: key '{key}' must be 'section.key'", number)
        section, name = key.split(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown section '{section}'", number)
        if name not in SECTIONS[section].model_fields:
            raise ConfigError(f"unknown key '{key}'", number)
        if (section, name) in lines:
            raise ConfigError(f"duplicate key '{key}' (first set on line {lines[(section, name)]})", number)
        raw.setdefault(section, {})[name] = value
        lines[(section, name)] = number
    return raw, lines


def _first_error(exc: ValidationError, section: str, lines) -> ConfigError:
    error = exc.errors()[0]
    loc = [str(part) for part in error["loc"]]
    key = loc[0] if loc else None
    message = error["msg"].removeprefix("Value error, ")
    label = f"{section}.{key}" if key else section
    line = lines.get((section, key)) if key else None
    if line is None:
        section_lines = [n for (s, _), n in lines.items() if s == section]
        line = min(section_lines) if section_lines else None
    return ConfigError(f"{label}: {message}", line)


def parse_config(text: str) -> Config:
    raw, lines = _tokenize(text)
    sections = {}
    for name, model in SECTIONS.items():
        try:
            sections[name] = model.model_validate(raw.get(name, {}))
        except ValidationError as exc:
            raise _first_error(exc, name, lines) from None
    try:
        return Config(**sections)
    except ValidationError as exc:
        message = exc.errors()[0]["msg"].removeprefix("Value error, ")
        line = lines.get(("continuation", "kappa_target"))
        raise ConfigError(f"continuation.kappa_target: {message}", line) from None


def _serialize_value(section: str, key: str, value) -> str:
    if value is None:
        return "none" if key == "spline_file" else "auto"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return fmt(value)
    if isinstance(value, list):
        return ", ".join(fmt(v) if isinstance(v, float) else str(v) for v in value)
    return str(value)


def serialize_config(config: Config) -> str:
    out = []
    for section in SECTIONS:
        values = getattr(config, section)
        for key in type(values).model_fields:
            out.append(f"{section}.{key} = {_serialize_value(section, key, getattr(values, key))}")
        out.append("")
    return "\n".join(out)


def load_config(path: Optional[Union[str, Path]] = None) -> Config:
    """Parse a config file, or return the defaults when no path is given."""
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text)
