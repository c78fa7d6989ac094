"""Run configuration: one YAML file with a section per module.

Every simulation constant has a default here; a config file only lists what it
changes. ``RunConfig.to_dict`` gives the fully resolved form that is echoed
into the output directory and can be fed back in unchanged.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from ..dynamics import BirthModel, TransitionParams
from ..inference import Hypers, InitConfig, Models
from ..scene import ScenarioError, bundled_scenario, load_scenario
from ..signal_model import PathAmplitudeModel, PulseSpec


class ConfigError(ValueError):
    """Invalid or unreadable run configuration (CLI exit code 2)."""


@dataclass
class PulseSection:
    M: int = 41
    delta_hz: float = 1e7
    spectrum: Optional[list] = None  # per-bin magnitudes; None means flat

    def build(self) -> PulseSpec:
        return PulseSpec(self.M, self.delta_hz, self.spectrum)


@dataclass
class AmplitudeSection:
    gamma_ref: float = 1e6
    d_ref: float = 1.0
    reflection_loss_db: float = 3.0
    sigma2: float = 1e3  # true noise variance per bin

    def build(self) -> PathAmplitudeModel:
        return PathAmplitudeModel(self.gamma_ref, self.d_ref, self.reflection_loss_db)


@dataclass
class DynamicsSection:
    sigma_qx: float = 1e-2
    sigma_q_phi: list = field(default_factory=lambda: [1e-4, 1e-4, 1e-2])
    p_s: float = 0.999
    c_eps: float = 10.0

    def build(self) -> TransitionParams:
        return TransitionParams(self.sigma_qx, tuple(self.sigma_q_phi), self.p_s, self.c_eps)


@dataclass
class BirthSection:
    p_birth: Optional[float] = 1e-4
    mu_b: Optional[float] = None
    gamma_prior: list = field(default_factory=lambda: [1e-3, 1e1])
    cell_width: Optional[float] = None  # None means c / bandwidth

    def build(self, pulse: PulseSpec) -> BirthModel:
        w = pulse.range_resolution if self.cell_width is None else self.cell_width
        return BirthModel(w, self.p_birth, self.mu_b, tuple(self.gamma_prior))


@dataclass
class MetricsSection:
    gospa_c: float = 2.0
    gospa_p: float = 1.0
    visibility_gated: bool = True


_SECTIONS = {
    "pulse": PulseSection,
    "amplitude": AmplitudeSection,
    "dynamics": DynamicsSection,
    "birth": BirthSection,
    "hypers": Hypers,
    "init": InitConfig,
    "metrics": MetricsSection,
}


@dataclass
class RunConfig:
    scenario: str = "demo_fig4"
    n_runs: int = 100
    base_seed: int = 0
    steps: Optional[int] = None  # truncate the trajectory
    pulse: PulseSection = field(default_factory=PulseSection)
    amplitude: AmplitudeSection = field(default_factory=AmplitudeSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    birth: BirthSection = field(default_factory=BirthSection)
    hypers: Hypers = field(default_factory=Hypers)
    init: InitConfig = field(default_factory=InitConfig)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ConfigError("base_seed must fit in an unsigned 64-bit integer")

    # -- resolution -----------------------------------------------------------

    def scenario_path(self) -> Path:
        p = Path(self.scenario)
        if p.suffix in (".yaml", ".yml"):
            return p if p.is_absolute() else self.base_dir / p
        return bundled_scenario(self.scenario)

    def load_scene(self):
        try:
            plan, anchors, traj = load_scenario(self.scenario_path())
        except ScenarioError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
        if self.steps is not None:
            traj = type(traj)(traj.positions[: self.steps])
        return plan, anchors, traj

    def models(self, bounds) -> Models:
        pulse = self.pulse.build()
        return Models(pulse, self.dynamics.build(), self.birth.build(pulse), tuple(bounds), self.hypers)

    def check(self) -> None:
        """Build every component once so invalid values surface as ConfigError."""
        try:
            pulse = self.pulse.build()
            self.amplitude.build()
            self.dynamics.build()
            self.birth.build(pulse)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.amplitude.sigma2 > 0:
            raise ConfigError("amplitude.sigma2 must be positive")
        if not self.metrics.gospa_c > 0 or self.metrics.gospa_p < 1:
            raise ConfigError("metrics: need gospa_c > 0 and gospa_p >= 1")
        self.load_scene()

    # -- (de)serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        out = {"scenario": self.scenario, "n_runs": self.n_runs, "base_seed": self.base_seed,
               "steps": self.steps}
        for name in _SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"config: unknown key(s) {sorted(unknown)}")
        kwargs = {}
        for key, val in doc.items():
            if key in _SECTIONS:
                kwargs[key] = _section(key, val)
            else:
                kwargs[key] = val
        try:
            cfg = cls(**kwargs, base_dir=Path(base_dir))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config: {exc}") from exc
        return cfg

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _section(name: str, val):
    kind = _SECTIONS[name]
    if val is None:
        val = {}
    if not isinstance(val, dict):
        raise ConfigError(f"{name}: expected a mapping")
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(val) - names
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")
    val = {k: tuple(v) if isinstance(v, list) and kind in (Hypers, InitConfig) else v for k, v in val.items()}
    try:
        return kind(**val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def bundled_config(name: str) -> Path:
    """Path of a run config shipped with the package (``desk`` or ``paper``)."""
    return Path(str(resources.files("directslam") / "data" / "configs" / f"{name}.yaml"))


def load_config(path) -> RunConfig:
    """Read a config file; a bare name such as ``desk`` selects a bundled one."""
    p = Path(path)
    if not p.suffix and not p.exists():
        p = bundled_config(str(path))
    try:
        doc = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark else ""
        raise ConfigError(f"{p}: parse error{where}") from exc
    return RunConfig.from_dict(doc or {}, base_dir=p.parent)
