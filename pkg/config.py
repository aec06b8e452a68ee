"""
Scenario configuration: JSON scenario files, validation and environment overrides.
"""

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv

from anomaly import Detector
from distribution import FULL_RESERVE_DEVIATION_HZ, FrequencySource
from extrapolation import Method
from transmission import EventKind, GridEvent

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "results"


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario settings."""


def env_output_dir() -> str:
    return os.getenv("TDCOSIM_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)


def env_log_level() -> str:
    return os.getenv("TDCOSIM_LOG_LEVEL", "INFO").upper()


def env_workers() -> int:
    raw = os.getenv("TDCOSIM_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring TDCOSIM_WORKERS=%r, using 1 worker", raw)
        return 1


@dataclass
class GeneratorConfig:
    name: str
    rating_mw: float
    inertia_m: float
    damping_d: float = 4.0
    droop_r: float = 0.05
    governor_tg: float = 0.5
    boundary_weight: float = 1.0

    def __post_init__(self):
        if self.rating_mw <= 0 or self.inertia_m <= 0 or self.droop_r <= 0 or self.governor_tg <= 0:
            raise ConfigError(f"generator {self.name}: rating, inertia, droop and governor time must be positive")
        if self.damping_d < 0 or self.boundary_weight < 0:
            raise ConfigError(f"generator {self.name}: damping and boundary weight must be non-negative")


@dataclass
class AgcConfig:
    """AGC settings; the request is -(kp*ACE + ki*integral(ACE)) with positive gains."""

    enabled: bool = False
    bias_b: float = 48.0
    kp: float = 0.05
    ki: float = 0.2
    participation: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ConfigError("AGC gains must be non-negative")
        if self.enabled:
            if any(b < 0 for b in self.participation.values()):
                raise ConfigError(f"AGC participation factors must be non-negative: {self.participation}")
            if abs(math.fsum(self.participation.values()) - 1.0) > 1e-9:
                raise ConfigError(f"AGC participation factors must sum to 1: {self.participation}")


@dataclass
class TransmissionConfig:
    generators: List[GeneratorConfig]
    base_load_mw: float
    f0: float = 60.0
    swing_coupling: float = 1.5
    v_nominal: float = 1.0
    theta_offset_deg: float = -18.5
    voltage_sensitivity_pu_per_mw: float = 5e-4
    trip_angle_deg_per_mw: float = 0.05
    fault_angle_deg: float = -3.0
    fault_load_fraction: float = 0.1
    max_integration_step: float = 1e-4
    measurement_noise_pu: float = 0.0
    measurement_noise_deg: float = 0.0
    agc: AgcConfig = field(default_factory=AgcConfig)

    def __post_init__(self):
        if not self.generators:
            raise ConfigError("at least one generator is required")
        names = [g.name for g in self.generators]
        if len(set(names)) != len(names):
            raise ConfigError(f"generator names must be unique: {names}")
        if self.base_load_mw <= 0 or self.f0 <= 0 or self.max_integration_step <= 0:
            raise ConfigError("base load, f0 and max_integration_step must be positive")
        if not 0.0 <= self.fault_load_fraction <= 1.0:
            raise ConfigError(f"fault_load_fraction must lie in [0, 1], got {self.fault_load_fraction}")
        if self.measurement_noise_pu < 0 or self.measurement_noise_deg < 0:
            raise ConfigError("measurement noise must be non-negative")
        if self.agc.enabled:
            unknown = set(self.agc.participation) - set(names) - {"dpv"}
            if unknown:
                raise ConfigError(f"AGC participation names unknown resources: {sorted(unknown)}")


@dataclass
class PlantConfig:
    name: str
    p_mpp: Union[float, List[List[float]]]
    reserve: float
    p_min: float = 0.0
    droop_d: Optional[float] = None
    db_uf: float = 0.036
    db_of: float = 0.036

    def __post_init__(self):
        if isinstance(self.p_mpp, (list, tuple)):
            if not self.p_mpp or any(len(point) != 2 for point in self.p_mpp):
                raise ConfigError(f"plant {self.name}: p_mpp profile must be a non-empty list of [t, kW] pairs")
            times = [float(t) for t, _ in self.p_mpp]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigError(f"plant {self.name}: p_mpp profile times must increase")
            lowest = min(float(y) for _, y in self.p_mpp)
        else:
            lowest = float(self.p_mpp)
        if self.reserve < 0 or self.db_uf < 0 or self.db_of < 0:
            raise ConfigError(f"plant {self.name}: reserve and deadbands must be non-negative")
        if self.droop_d is None:
            if self.db_uf >= FULL_RESERVE_DEVIATION_HZ:
                raise ConfigError(
                    f"plant {self.name}: default droop needs db_uf below {FULL_RESERVE_DEVIATION_HZ} Hz"
                )
        elif self.droop_d < 0:
            raise ConfigError(f"plant {self.name}: droop must be non-negative")
        if not 0.0 <= self.p_min <= lowest - self.reserve:
            raise ConfigError(
                f"plant {self.name}: need 0 <= p_min <= p_mpp - reserve, "
                f"got p_min={self.p_min}, p_mpp={lowest}, reserve={self.reserve}"
            )


@dataclass
class PllConfig:
    kp: float = 180.0
    ki: float = 3200.0
    f_filter_tau: float = 0.01
    amplitude_floor: float = 0.1

    def __post_init__(self):
        if self.kp <= 0 or self.ki <= 0 or self.f_filter_tau < 0 or self.amplitude_floor <= 0:
            raise ConfigError("PLL gains and amplitude floor must be positive")


@dataclass
class DistributionConfig:
    p_load_kw: float
    q_load_kvar: float
    plants: List[PlantConfig] = field(default_factory=list)
    pll: PllConfig = field(default_factory=PllConfig)
    frequency_source: FrequencySource = FrequencySource.PLL

    def __post_init__(self):
        try:
            self.frequency_source = FrequencySource(self.frequency_source)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.p_load_kw < 0:
            raise ConfigError(f"feeder load must be non-negative, got {self.p_load_kw}")


@dataclass
class ScenarioConfig:
    """A complete, validated co-simulation scenario."""

    t_t: float
    t_d: float
    duration: float
    transmission: TransmissionConfig
    distribution: DistributionConfig
    method: Method = Method.QUADRATIC
    lpf_alpha: float = 0.01
    strict_refill: bool = True
    rate_limit_enabled: bool = True
    detector: Detector = Detector.EWMA
    alpha_cap: float = 0.01
    c: float = 3.0
    epsilon: float = 1e-6
    warmup: int = 10
    window_seconds: float = 1.0
    events: List[GridEvent] = field(default_factory=list)
    seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        try:
            self.method = Method(self.method)
            self.detector = Detector(self.detector)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not (self.t_t >= self.t_d > 0):
            raise ConfigError(f"need t_t >= t_d > 0, got t_t={self.t_t}, t_d={self.t_d}")
        ratio = self.t_t / self.t_d
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError(f"t_t/t_d must be a positive integer, got {ratio}")
        if self.duration <= 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if not 0.0 < self.lpf_alpha <= 1.0:
            raise ConfigError(f"lpf_alpha must lie in (0, 1], got {self.lpf_alpha}")
        if self.warmup < 0 or self.window_seconds <= 0:
            raise ConfigError("warmup must be non-negative and window_seconds positive")

        n_sub = max(1, math.ceil(self.t_t / self.transmission.max_integration_step - 1e-9))
        h = self.t_t / n_sub
        for g in self.transmission.generators:
            limit = min(g.governor_tg, g.inertia_m) / 10.0
            if h > limit:
                raise ConfigError(
                    f"integration step {h:g} s exceeds {limit:g} s for generator {g.name}"
                )

        names = {g.name for g in self.transmission.generators}
        for e in self.events:
            if e.kind is EventKind.GEN_TRIP and e.target is not None and e.target not in names:
                raise ConfigError(f"trip target {e.target} is not a generator")
        if self.output_dir is None:
            self.output_dir = env_output_dir()

    @property
    def ratio(self) -> int:
        return int(round(self.t_t / self.t_d))

    @property
    def n_exchanges(self) -> int:
        return int(round(self.duration / self.t_t))

    @property
    def window_capacity(self) -> int:
        return max(1, int(round(self.window_seconds / self.t_t)))


def _build(cls, data: Dict[str, Any], section: str, **nested):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    kwargs = {**data, **nested}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


def _named(value: Union[str, Dict[str, Any]], section: str) -> Dict[str, Any]:
    if isinstance(value, str):
        return {"name": value}
    if isinstance(value, dict) and "name" in value:
        return dict(value)
    raise ConfigError(f"section '{section}' must be a name or an object with 'name'")


_METHOD_KEYS = {"name": "method", "lpf_alpha": "lpf_alpha", "strict_refill": "strict_refill", "rate_limit": "rate_limit_enabled"}
_DETECTOR_KEYS = {"name": "detector", "alpha_cap": "alpha_cap", "c": "c", "epsilon": "epsilon", "warmup": "warmup", "window_s": "window_seconds"}
_TOP_KEYS = {"timesteps", "method", "detector", "transmission", "distribution", "events", "output", "seed"}


def _remap(data: Dict[str, Any], mapping: Dict[str, str], section: str) -> Dict[str, Any]:
    unknown = set(data) - set(mapping)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return {mapping[k]: v for k, v in data.items()}


def scenario_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    """
    Build a validated scenario from its JSON object form.

    Args:
        data: Parsed scenario file

    Returns:
        ScenarioConfig
    """
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for required in ("timesteps", "transmission", "distribution"):
        if required not in data:
            raise ConfigError(f"missing section '{required}'")

    tx = dict(data["transmission"])
    gens = [_build(GeneratorConfig, g, "transmission.generators") for g in tx.pop("generators", [])]
    agc = _build(AgcConfig, tx.pop("agc", {}), "transmission.agc")
    transmission = _build(TransmissionConfig, tx, "transmission", generators=gens, agc=agc)

    dx = dict(data["distribution"])
    plants = [_build(PlantConfig, p, "distribution.plants") for p in dx.pop("plants", [])]
    pll = _build(PllConfig, dx.pop("pll", {}), "distribution.pll")
    distribution = _build(DistributionConfig, dx, "distribution", plants=plants, pll=pll)

    events = []
    for raw in data.get("events", []):
        ev = dict(raw)
        unknown = set(ev) - {"kind", "t", "magnitude", "target"}
        if unknown:
            raise ConfigError(f"unknown keys in event: {sorted(unknown)}")
        try:
            events.append(GridEvent(**ev))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad event {raw}: {exc}") from exc

    timesteps = data["timesteps"]
    ts_unknown = set(timesteps) - {"t_t", "t_d", "duration"}
    if ts_unknown:
        raise ConfigError(f"unknown keys in 'timesteps': {sorted(ts_unknown)}")
    try:
        kwargs = dict(t_t=float(timesteps["t_t"]), t_d=float(timesteps["t_d"]), duration=float(timesteps["duration"]))
    except KeyError as exc:
        raise ConfigError(f"timesteps is missing {exc}") from exc

    if "method" in data:
        kwargs.update(_remap(_named(data["method"], "method"), _METHOD_KEYS, "method"))
    if "detector" in data:
        kwargs.update(_remap(_named(data["detector"], "detector"), _DETECTOR_KEYS, "detector"))
    output = data.get("output", {})
    if set(output) - {"dir"}:
        raise ConfigError(f"unknown keys in 'output': {sorted(set(output) - {'dir'})}")

    try:
        return ScenarioConfig(
            transmission=transmission,
            distribution=distribution,
            events=events,
            seed=int(data.get("seed", 0)),
            output_dir=output.get("dir"),
            **kwargs,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a scenario file; a missing file raises FileNotFoundError."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    config = scenario_from_dict(data)
    logger.info("loaded scenario %s: %s/%s, ratio %d", path, config.method.value, config.detector.value, config.ratio)
    return config


def _plain(value):
    if isinstance(value, (Method, Detector, FrequencySource, EventKind)):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def scenario_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    return _plain(dataclasses.asdict(config))


def scenario_hash(config: ScenarioConfig) -> int:
    """48-bit digest of the scenario, output location excluded; exact as a float64."""
    data = scenario_to_dict(config)
    data.pop("output_dir", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return int(hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12], 16)


def with_overrides(config: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy a scenario with top-level fields replaced and re-validated."""
    return dataclasses.replace(config, **changes)


def with_agc(config: ScenarioConfig, enabled: bool) -> ScenarioConfig:
    agc = dataclasses.replace(config.transmission.agc, enabled=enabled)
    return with_overrides(config, transmission=dataclasses.replace(config.transmission, agc=agc))


def with_noise(config: ScenarioConfig, noise_pu: float, noise_deg: float) -> ScenarioConfig:
    tx = dataclasses.replace(config.transmission, measurement_noise_pu=noise_pu, measurement_noise_deg=noise_deg)
    return with_overrides(config, transmission=tx)


def ground_truth(config: ScenarioConfig) -> ScenarioConfig:
    """Matched-timestep twin of a scenario (t_t = t_d), scored by EWMA."""
    return with_overrides(config, t_t=config.t_d, method=Method.HOLD, detector=Detector.EWMA)
