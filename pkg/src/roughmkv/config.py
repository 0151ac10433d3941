"""Experiment configuration: flat INI text with one section per stage.

Unknown sections and fields are rejected, missing required fields are
named, and ``ExperimentConfig.to_ini`` re-parses to an equal object.
"""

import configparser
import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources

from .averaging import constant, gaussian_bump, holder_modulation, power_kernel, zero
from .errors import ConfigError
from .particles import hypothesis_gate

REQUIRED = object()


@dataclass(frozen=True)
class ScenarioSection:
    name: str = REQUIRED
    description: str = ""


@dataclass(frozen=True)
class DriverSection:
    hurst: float = REQUIRED
    dim: int = 1
    steps: int = REQUIRED
    horizon: float = 1.0


@dataclass(frozen=True)
class CoefficientSection:
    drift: str = "zero"
    diffusion: str = "constant"
    drift_amplitude: float = 1.0
    diffusion_amplitude: float = 1.0
    width: float = 0.5
    diffusion_width: float = 0.7
    drift_offset: float = 0.0
    diffusion_offset: float = 0.0
    gamma: float = 0.3
    gamma0: float = 1.0
    modulation_amplitude: float = 0.0


@dataclass(frozen=True)
class SolverSection:
    particles: int = REQUIRED
    eps: tuple = REQUIRED
    seed: int = REQUIRED
    x0: float = 0.0
    functional: str = "mean"


@dataclass(frozen=True)
class HypothesisSection:
    zeta0: float | None = None
    gamma1: float = 1.0


@dataclass(frozen=True)
class DiagnosticsSection:
    nondeterminism: bool = True
    local_time: bool = True
    moment_holder: bool = True
    law_flow: bool = True
    ito_isometry: bool = True
    martingale: bool = True
    adversarial: bool = False
    germ_scan: bool = False
    moment_p: float = 2.0
    # tolerances: not part of the hashed inputs
    nondeterminism_tolerance: float = 0.02
    exponent_tolerance: float = 0.1
    c_ratio_max: float = 2.0
    law_flow_target: str = "gamma1"
    law_flow_tolerance: float = 0.1
    se_band: float = 3.0


TOLERANCE_FIELDS = ("nondeterminism_tolerance", "exponent_tolerance", "c_ratio_max",
                    "law_flow_target", "law_flow_tolerance", "se_band")


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"


SECTIONS = {
    "scenario": ScenarioSection,
    "driver": DriverSection,
    "coefficients": CoefficientSection,
    "solver": SolverSection,
    "hypothesis": HypothesisSection,
    "diagnostics": DiagnosticsSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSection
    driver: DriverSection
    coefficients: CoefficientSection
    solver: SolverSection
    hypothesis: HypothesisSection = field(default_factory=HypothesisSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def name(self):
        return self.scenario.name

    @property
    def zeta0(self):
        return self.driver.hurst if self.hypothesis.zeta0 is None else self.hypothesis.zeta0

    @property
    def gate(self):
        return hypothesis_gate(self.zeta0, self.coefficients.gamma0, self.hypothesis.gamma1,
                               self.driver.dim)

    @property
    def law_flow_target(self):
        target = self.diagnostics.law_flow_target.strip()
        if target == "gamma1":
            return self.hypothesis.gamma1
        if target == "half_gamma1":
            return self.hypothesis.gamma1 / 2
        return float(target)

    def with_values(self, **changes):
        """Copy with dotted-path overrides, e.g. ``{"solver.seed": 3}``."""
        cfg = self
        for key, value in changes.items():
            section, name = key.split(".")
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
        return cfg

    def to_ini(self, include_tolerances=True, include_output=True):
        lines = []
        for sec_name in SECTIONS:
            if sec_name == "output" and not include_output:
                continue
            sec = getattr(self, sec_name)
            lines.append(f"[{sec_name}]")
            for f in fields(sec):
                if not include_tolerances and f.name in TOLERANCE_FIELDS:
                    continue
                value = getattr(sec, f.name)
                if value is None:
                    continue
                lines.append(f"{f.name} = {_emit(value)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        """sha256 of the numerical inputs (tolerances and output location excluded)."""
        text = self.to_ini(include_tolerances=False, include_output=False)
        return hashlib.sha256(text.encode()).hexdigest()


def _emit(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_emit(v) for v in value)
    return str(value)


def _line_of(text, section, key=None):
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return n
    return None


def _convert(raw, f, section, text):
    kind = f.type
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == (float | None):
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if kind is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {f.name}: cannot parse {raw!r}",
                          field=f"{section}.{f.name}", line=_line_of(text, section, f.name)) from None


def parse_config(text):
    """Parse INI text into an :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", line=getattr(exc, "lineno", None)) from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]", field=unknown[0], line=_line_of(text, unknown[0]))
    parts = {}
    for sec_name, cls in SECTIONS.items():
        known = {f.name: f for f in fields(cls)}
        raw = dict(parser.items(sec_name)) if parser.has_section(sec_name) else {}
        for key in raw:
            if key not in known:
                raise ConfigError(f"[{sec_name}] unknown field {key!r}", field=f"{sec_name}.{key}",
                                  line=_line_of(text, sec_name, key))
        values = {}
        for name, f in known.items():
            if name in raw:
                values[name] = _convert(raw[name], f, sec_name, text)
            elif f.default is REQUIRED:
                raise ConfigError(f"missing required field {sec_name}.{name}", field=f"{sec_name}.{name}",
                                  line=_line_of(text, sec_name))
        parts[sec_name] = cls(**values)
    cfg = ExperimentConfig(**parts)
    validate(cfg)
    return cfg


def validate(cfg):
    def bad(where, msg):
        raise ConfigError(f"{where}: {msg}", field=where)

    if not 0 < cfg.driver.hurst < 1:
        bad("driver.hurst", "must lie in (0, 1)")
    if cfg.driver.steps < 16:
        bad("driver.steps", "must be >= 16")
    if cfg.solver.particles < 2:
        bad("solver.particles", "must be >= 2")
    eps = cfg.solver.eps
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        bad("solver.eps", "must be positive and strictly descending")
    if not 0 <= cfg.solver.seed < 2**64:
        bad("solver.seed", "must be an unsigned 64-bit integer")
    for role in ("drift", "diffusion"):
        name = getattr(cfg.coefficients, role)
        if name not in COEFFICIENT_PRESETS:
            bad(f"coefficients.{role}", f"unknown preset {name!r}")
    try:
        cfg.law_flow_target
    except ValueError:
        bad("diagnostics.law_flow_target", "expected gamma1, half_gamma1 or a number")


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


# -- coefficient presets ------------------------------------------------------------


def _modulation(c):
    if c.modulation_amplitude == 0:
        return None
    return holder_modulation(c.gamma0, c.modulation_amplitude, 0.5, 1.0)


def _preset_zero(c, k, role):
    return zero(k, role)


def _preset_constant(c, k, role):
    amp = c.drift_amplitude if role == "drift" else c.diffusion_amplitude
    return constant(amp, k, role, modulation=_modulation(c))


def _preset_gaussian(c, k, role):
    if role == "drift":
        return gaussian_bump(c.drift_amplitude, c.width, k, role, c.drift_offset, _modulation(c))
    return gaussian_bump(c.diffusion_amplitude, c.diffusion_width, k, role, c.diffusion_offset,
                         _modulation(c))


def _preset_flocking(c, k, role):
    amp = c.drift_amplitude if role == "drift" else c.diffusion_amplitude
    return power_kernel(c.gamma, k, amp, odd=(role == "drift"), role=role, modulation=_modulation(c))


COEFFICIENT_PRESETS = {
    "zero": _preset_zero,
    "constant": _preset_constant,
    "gaussian": _preset_gaussian,
    "flocking": _preset_flocking,
}


def build_coefficients(cfg):
    """(drift, diffusion) Coefficient objects for the configured presets."""
    c, k = cfg.coefficients, cfg.driver.dim
    return (COEFFICIENT_PRESETS[c.drift](c, k, "drift"),
            COEFFICIENT_PRESETS[c.diffusion](c, k, "diffusion"))


# -- shipped scenarios ------------------------------------------------------------------


def scenario_names():
    files = resources.files("roughmkv") / "scenarios"
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".ini"))


def scenario_text(name):
    path = resources.files("roughmkv") / "scenarios" / f"{name}.ini"
    if not path.is_file():
        raise ConfigError(f"unknown scenario {name!r}; shipped: {', '.join(scenario_names())}")
    return path.read_text()


def load_scenario(name):
    return parse_config(scenario_text(name))

