"""
Experiment configuration: a YAML file mapped onto a tree of dataclasses.

Everything that determines results lives in the file; process knobs
(log level, thread count, output root) come from the environment.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

import numpy as np
import yaml

from ..gmnse_integration.dynamics import SCHEMES, GmnseParams
from ..gmnse_integration.errors import ConfigError
from ..gmnse_integration.spectral_core import (
    TWO_PI,
    SpectralVelocityField,
    TorusDomain,
    leray_project,
    norms,
    transform_to_spectral,
)

logger = logging.getLogger("gmnse")

EXPERIMENTS = ("simulate", "verify-estimates", "attractor", "dimension", "smoothing", "time-regularity", "rate-fit")
FORCING_PRESETS = ("first-shell", "taylor-green-like")
CHECKPOINT_FORMATS = ("binary", "text")
PROJECTION_TOLERANCE = 1e-12


@dataclass
class ParamsConfig:
    nu: float = 1.0
    n_cap: float = 10.0
    resolution: int = 16
    dimension: int = 3
    edge_length: float = TWO_PI
    dt: float = 1e-3
    scheme: str = "if-euler"

    def validate(self, path: str) -> None:
        for name in ("nu", "n_cap", "dt", "edge_length"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"must be positive and finite, got {value}", field=f"{path}.{name}")
        if self.resolution < 4 or self.resolution % 2:
            raise ConfigError(f"must be an even integer >= 4, got {self.resolution}", field=f"{path}.resolution")
        if self.dimension not in (2, 3):
            raise ConfigError(f"must be 2 or 3, got {self.dimension}", field=f"{path}.dimension")
        if self.scheme not in SCHEMES:
            raise ConfigError(
                f"unknown scheme '{self.scheme}', expected one of {', '.join(SCHEMES)}", field=f"{path}.scheme"
            )


@dataclass
class ForcingMode:
    """One +k/-k pair: complex amplitude per velocity component as [re, im]"""

    k: List[int] = field(default_factory=list)
    amplitude: List[List[float]] = field(default_factory=list)


@dataclass
class ForcingConfig:
    """Without modes or zero: true the first-shell preset applies"""

    preset: Optional[str] = None
    amplitude: float = 1.0
    modes: List[ForcingMode] = field(default_factory=list)
    zero: bool = False

    @property
    def effective_preset(self) -> Optional[str]:
        if self.zero or self.modes:
            return self.preset
        return self.preset or "first-shell"

    def validate(self, path: str) -> None:
        if self.zero and (self.modes or self.preset):
            raise ConfigError("zero forcing excludes preset and modes", field=path)
        if self.preset is not None and self.preset not in FORCING_PRESETS:
            raise ConfigError(
                f"unknown preset '{self.preset}', expected one of {', '.join(FORCING_PRESETS)}",
                field=f"{path}.preset",
            )
        if self.modes and self.preset:
            raise ConfigError("preset and modes are mutually exclusive", field=path)


@dataclass
class RunConfig:
    t_final: float = 5.0
    record_every: int = 10
    checkpoint_every: Optional[int] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "output"
    threads: int = 1
    initial_h_norm: float = 1.0
    checkpoint_format: str = "binary"

    def validate(self, path: str) -> None:
        if self.t_final < 0:
            raise ConfigError(f"must be nonnegative, got {self.t_final}", field=f"{path}.t_final")
        if self.record_every < 1:
            raise ConfigError(f"must be a positive integer, got {self.record_every}", field=f"{path}.record_every")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError(
                f"must be a positive integer, got {self.checkpoint_every}", field=f"{path}.checkpoint_every"
            )
        if not self.seeds:
            raise ConfigError("at least one seed is required", field=f"{path}.seeds")
        if self.threads < 1:
            raise ConfigError(f"must be at least 1, got {self.threads}", field=f"{path}.threads")
        if self.initial_h_norm < 0:
            raise ConfigError(f"must be nonnegative, got {self.initial_h_norm}", field=f"{path}.initial_h_norm")
        if self.checkpoint_format not in CHECKPOINT_FORMATS:
            raise ConfigError(
                f"expected one of {', '.join(CHECKPOINT_FORMATS)}", field=f"{path}.checkpoint_format"
            )


@dataclass
class EstimatesConfig:
    perturbation_sizes: List[float] = field(default_factory=lambda: [1e-2, 1e-4])
    perturbation_cutoff: Optional[float] = None
    smoothing_t_min: float = 0.1
    pair_t_final: float = 2.0
    burn_in_max: float = 20.0
    slack: float = 0.05
    modulation_samples: int = 1_000_000
    regularity_t_final: float = 2.0
    regularity_checkpoint_every: int = 100

    def validate(self, path: str) -> None:
        if not self.perturbation_sizes or any(s <= 0 for s in self.perturbation_sizes):
            raise ConfigError("needs at least one positive size", field=f"{path}.perturbation_sizes")
        for name in ("smoothing_t_min", "pair_t_final", "burn_in_max", "regularity_t_final"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", field=f"{path}.{name}")
        if self.slack < 0:
            raise ConfigError(f"must be nonnegative, got {self.slack}", field=f"{path}.slack")
        if self.modulation_samples < 1 or self.regularity_checkpoint_every < 1:
            raise ConfigError("sample counts must be positive", field=path)


@dataclass
class AttractorConfig:
    ensemble_size: int = 8
    t_transient: float = 5.0
    t_sample: float = 5.0
    n_snapshots: int = 16
    projection_dims: List[int] = field(default_factory=lambda: [6, 12])
    rate_times: List[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0])
    rate_ensemble_size: int = 4
    radius_floor: float = 0.0  # 0 with zero forcing selects UNFORCED_FLOOR_FRACTION
    invariance_time: float = 0.5

    def validate(self, path: str) -> None:
        for name in ("ensemble_size", "n_snapshots", "rate_ensemble_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be a positive integer, got {getattr(self, name)}", field=f"{path}.{name}")
        if self.t_transient < 0 or self.t_sample < 0 or self.invariance_time < 0:
            raise ConfigError("times must be nonnegative", field=path)
        if not self.projection_dims or any(d < 1 for d in self.projection_dims):
            raise ConfigError("needs at least one positive dimension", field=f"{path}.projection_dims")
        times = self.rate_times
        if not times or any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("must be nonnegative and strictly increasing", field=f"{path}.rate_times")
        if self.radius_floor < 0:
            raise ConfigError(f"must be nonnegative, got {self.radius_floor}", field=f"{path}.radius_floor")


SECTIONS = {
    "params": ParamsConfig,
    "forcing": ForcingConfig,
    "run": RunConfig,
    "estimates": EstimatesConfig,
    "attractor": AttractorConfig,
}


def _coerce(value: Any, hint: Any, path: str) -> Any:
    """Convert a YAML value to the annotated type, naming the field on failure"""
    origin = get_origin(hint)
    if origin is Union:
        options = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, options[0], path)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {type(value).__name__}", field=path)
        (item,) = get_args(hint)
        return [_coerce(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", field=path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", field=path)
        return value
    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(f"expected a number, got {value!r}", field=path)
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {value!r}", field=path)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", field=path)
        return value
    return value


def _build(cls: type, data: Any, path: str) -> Any:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", field=path)
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}', expected one of {', '.join(sorted(names))}",
                          field=f"{path}.{unknown[0]}" if path else unknown[0])
    kwargs = {name: _coerce(value, hints[name], f"{path}.{name}" if path else name) for name, value in data.items()}
    return cls(**kwargs)


def _preset_grid(preset: str, domain: TorusDomain) -> np.ndarray:
    x = domain.grid() * domain.wavenumber_scale
    if preset == "first-shell":
        if domain.dimension == 3:
            return np.stack([np.sin(x[2]), np.sin(x[0]), np.sin(x[1])])
        return np.stack([np.sin(x[1]), np.sin(x[0])])
    if domain.dimension == 3:
        return np.stack([
            np.sin(x[0]) * np.cos(x[1]) * np.cos(x[2]),
            -np.cos(x[0]) * np.sin(x[1]) * np.cos(x[2]),
            np.zeros(domain.shape),
        ])
    return np.stack([np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])])


@dataclass
class ExperimentConfig:
    """Validated experiment description; round-trips through to_dict/from_dict"""

    experiment: str = "simulate"
    params: ParamsConfig = field(default_factory=ParamsConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    run: RunConfig = field(default_factory=RunConfig)
    estimates: EstimatesConfig = field(default_factory=EstimatesConfig)
    attractor: AttractorConfig = field(default_factory=AttractorConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment '{self.experiment}', expected one of {', '.join(EXPERIMENTS)}",
                field="experiment",
            )
        for name in SECTIONS:
            getattr(self, name).validate(name)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        return _build(cls, data or {}, "")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def dump(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(self.to_dict(), handle, sort_keys=False)

    def with_overrides(
        self,
        experiment: Optional[str] = None,
        output_dir: Optional[str] = None,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        resolution: Optional[int] = None,
    ) -> "ExperimentConfig":
        """Copy with command-line overrides applied and validated"""
        data = self.to_dict()
        if experiment is not None:
            data["experiment"] = experiment
        if output_dir is not None:
            data["run"]["output_dir"] = str(output_dir)
        if seed is not None:
            data["run"]["seeds"] = [seed]
        if threads is not None:
            data["run"]["threads"] = threads
        if resolution is not None:
            data["params"]["resolution"] = resolution
        return ExperimentConfig.from_dict(data)

    def domain(self) -> TorusDomain:
        p = self.params
        return TorusDomain(p.resolution, p.dimension, p.edge_length)

    def raw_forcing(self, domain: Optional[TorusDomain] = None) -> np.ndarray:
        """Forcing coefficients before projection"""
        domain = domain or self.domain()
        forcing = self.forcing
        raw = np.zeros(domain.coeff_shape, dtype=np.complex128)
        if forcing.zero:
            return raw
        if forcing.effective_preset:
            return forcing.amplitude * transform_to_spectral(_preset_grid(forcing.effective_preset, domain), domain)
        for i, mode in enumerate(forcing.modes):
            path = f"forcing.modes[{i}]"
            if len(mode.amplitude) != domain.dimension or any(len(c) != 2 for c in mode.amplitude):
                raise ConfigError(f"amplitude needs {domain.dimension} [re, im] pairs", field=f"{path}.amplitude")
            if not any(mode.k):
                raise ConfigError("the zero wavevector carries no velocity", field=f"{path}.k")
            try:
                index = domain.index_of(mode.k)
                mirror = domain.index_of([-n for n in mode.k])
            except ValueError as error:
                raise ConfigError(str(error), field=f"{path}.k")
            amp = forcing.amplitude * np.array([complex(re, im) for re, im in mode.amplitude])
            raw[(slice(None),) + index] += amp
            raw[(slice(None),) + mirror] += np.conj(amp)
        return raw

    def build_forcing(self, domain: Optional[TorusDomain] = None) -> SpectralVelocityField:
        """
        Projected forcing; warns when projection changed the input.

        Raises:
            ConfigError: the forcing vanishes after projection without zero: true
        """
        domain = domain or self.domain()
        raw = self.raw_forcing(domain)
        projected = leray_project(raw, domain)
        raw_norm = float(np.sqrt(domain.volume * np.sum(np.abs(raw) ** 2)))
        change = float(np.sqrt(domain.volume * np.sum(np.abs(raw - projected.coeffs) ** 2)))
        if change > PROJECTION_TOLERANCE * max(raw_norm, 1.0):
            logger.warning(
                f"⚠️  Forcing changed by Leray projection: removed H-norm {change:.6g} of {raw_norm:.6g}"
            )
        if not self.forcing.zero and norms(projected).h_norm == 0.0:
            raise ConfigError("forcing is zero after projection; set zero: true for an unforced run", field="forcing")
        return projected

    def build_params(self) -> GmnseParams:
        domain = self.domain()
        p = self.params
        return GmnseParams(nu=p.nu, n_cap=p.n_cap, forcing=self.build_forcing(domain), dt=p.dt, domain=domain)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load and validate an experiment file; missing keys take their defaults.

    Raises:
        ConfigError: unreadable file, YAML syntax error (with line), unknown
            key or invalid value (with dotted field path)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigError(f"cannot read config {path}: {error}")
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as error:
        line = error.problem_mark.line + 1 if error.problem_mark else None
        raise ConfigError(f"YAML syntax error: {error.problem}", line=line)
    except yaml.YAMLError as error:
        raise ConfigError(f"YAML error: {error}")
    config = ExperimentConfig.from_dict(data)
    config.build_forcing()
    logger.info(f"🔧 Loaded config {path} (experiment={config.experiment}, hash={config.config_hash()[:12]})")
    return config
