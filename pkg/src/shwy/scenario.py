"""Scenario configuration: road geometry, traffic sizing, and model parameters.

Three named presets (``highway``, ``highway-fast``, ``merge``) cover the
supported scenarios.  Every field can be overridden from an INI config file
(section ``[scenario]``) or programmatically; the presets only fix defaults.
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path


class ScenarioKind(enum.Enum):
    HIGHWAY = "highway"
    HIGHWAY_FAST = "highway-fast"
    MERGE = "merge"


class ConfigError(ValueError):
    """Raised for configurations that violate a documented invariant."""


@dataclass(frozen=True)
class IdmParams:
    """Car-following parameters for the scripted traffic.

    ``a_max`` is the maximum acceleration, ``b_comf`` the comfortable
    deceleration, ``s0`` the minimum bumper gap, ``T`` the time headway and
    ``delta`` the acceleration exponent.
    """

    a_max: float = 3.0
    b_comf: float = 2.0
    s0: float = 10.0
    T: float = 1.5
    delta: float = 4.0

    def validate(self) -> None:
        for name in ("a_max", "b_comf", "s0", "T", "delta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"idm.{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class MobilParams:
    """Lane-change incentive/safety parameters for the scripted traffic."""

    politeness: float = 0.0
    a_threshold: float = 0.2
    b_safe: float = 2.0

    def validate(self) -> None:
        if not 0.0 <= self.politeness <= 1.0:
            raise ConfigError(f"mobil.politeness must be in [0, 1], got {self.politeness}")
        if self.a_threshold <= 0 or self.b_safe <= 0:
            raise ConfigError("mobil.a_threshold and mobil.b_safe must be > 0")


@dataclass(frozen=True)
class TrafficModelParams:
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)

    def validate(self) -> None:
        self.idm.validate()
        self.mobil.validate()


@dataclass(frozen=True)
class MergeRamp:
    """On-ramp geometry for the merge scenario.

    The ramp runs parallel to the rightmost main lane and ends at
    ``junction_position``; a ramp vehicle may begin merging once it is within
    ``ramp_length`` metres of the junction.
    """

    ramp_length: float = 80.0
    junction_position: float = 180.0


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind = ScenarioKind.HIGHWAY
    lane_count: int = 4
    traffic_count: int = 40
    horizon_steps: int = 40
    policy_hz: float = 1.0
    sim_hz: float = 15.0
    v_min: float = 20.0
    v_max: float = 30.0
    spawn_spacing_mean: float = 46.0
    # Traffic spawns as platoons: after each vehicle, with probability
    # platoon_break_prob the lane cursor also jumps an inter-platoon gap of
    # roughly platoon_gap_scale * spawn_spacing_mean.  Short columns stay
    # near their desired speed instead of compressing into a slow wall.
    platoon_break_prob: float = 0.35
    platoon_gap_scale: float = 3.0
    merge_ramp: MergeRamp | None = None

    # Road and vehicle geometry.
    lane_width: float = 4.0
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0

    # Ego control: target-speed grid realized by FASTER/SLOWER, proportional
    # speed tracking, and first-order lateral convergence (tau_lat seconds;
    # a 4 m lane change settles within ~3 tau).
    speed_grid: tuple[float, ...] = (20.0, 25.0, 30.0)
    ego_start_lane: int = 2
    ego_start_speed: float = 25.0
    ego_speed_kp: float = 2.0
    ego_accel_max: float = 6.0
    tau_lat: float = 0.5

    # Scripted traffic.  Desired speeds stay above the ego's lowest target
    # notch so a slowed-down ego can always fall out of a compressing queue.
    traffic: TrafficModelParams = field(default_factory=TrafficModelParams)
    traffic_speed_lo: float = 22.0
    traffic_speed_hi: float = 27.0
    b_hard: float = 8.0
    respawn_overtaken: bool = False

    # Observation.
    ttc_cap: float = 10.0

    @property
    def substeps(self) -> int:
        return int(round(self.sim_hz / self.policy_hz))

    @property
    def ramp_index(self) -> int:
        """Reserved lane index used by ramp vehicles before the junction."""
        return self.lane_count

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def validate(self) -> None:
        if self.lane_count < 2:
            raise ConfigError(f"lane_count must be >= 2, got {self.lane_count}")
        if self.traffic_count < 0:
            raise ConfigError(f"traffic_count must be >= 0, got {self.traffic_count}")
        if self.horizon_steps < 1:
            raise ConfigError(f"horizon_steps must be >= 1, got {self.horizon_steps}")
        if self.policy_hz <= 0 or self.sim_hz <= 0:
            raise ConfigError("policy_hz and sim_hz must be > 0")
        ratio = self.sim_hz / self.policy_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                f"sim_hz ({self.sim_hz}) must be an integer multiple of policy_hz ({self.policy_hz})"
            )
        if not self.v_min < self.v_max:
            raise ConfigError(f"v_min ({self.v_min}) must be < v_max ({self.v_max})")
        if (self.kind is ScenarioKind.MERGE) != (self.merge_ramp is not None):
            raise ConfigError("merge_ramp must be present exactly when kind is merge")
        if not 0 <= self.ego_start_lane < self.lane_count:
            raise ConfigError(f"ego_start_lane {self.ego_start_lane} outside [0, {self.lane_count})")
        if self.spawn_spacing_mean <= 0:
            raise ConfigError("spawn_spacing_mean must be > 0")
        if len(self.speed_grid) < 2 or any(
            b <= a for a, b in zip(self.speed_grid, self.speed_grid[1:])
        ):
            raise ConfigError("speed_grid must be strictly increasing with >= 2 notches")
        if self.ttc_cap <= 0:
            raise ConfigError("ttc_cap must be > 0")
        self.traffic.validate()


_PRESETS: dict[str, ScenarioConfig] = {
    "highway": ScenarioConfig(
        kind=ScenarioKind.HIGHWAY,
        lane_count=4,
        traffic_count=40,
        horizon_steps=40,
        spawn_spacing_mean=46.0,
        ego_start_lane=2,
    ),
    "highway-fast": ScenarioConfig(
        kind=ScenarioKind.HIGHWAY_FAST,
        lane_count=4,
        traffic_count=30,
        horizon_steps=30,
        spawn_spacing_mean=40.0,
        ego_start_lane=2,
    ),
    "merge": ScenarioConfig(
        kind=ScenarioKind.MERGE,
        lane_count=2,
        traffic_count=15,
        horizon_steps=40,
        spawn_spacing_mean=58.0,
        ego_start_lane=1,
        merge_ramp=MergeRamp(),
    ),
}

SCENARIO_NAMES = tuple(_PRESETS)


def scenario_preset(name: str) -> ScenarioConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES}") from None


_SCENARIO_FLOAT_KEYS = (
    "policy_hz", "sim_hz", "v_min", "v_max", "spawn_spacing_mean",
    "platoon_break_prob", "platoon_gap_scale", "lane_width",
    "vehicle_length", "vehicle_width", "ego_start_speed", "ego_speed_kp",
    "ego_accel_max", "tau_lat", "traffic_speed_lo", "traffic_speed_hi",
    "b_hard", "ttc_cap",
)
_SCENARIO_INT_KEYS = ("lane_count", "traffic_count", "horizon_steps", "ego_start_lane")


def apply_scenario_overrides(config: ScenarioConfig, options: dict[str, str]) -> ScenarioConfig:
    """Apply string-valued overrides (e.g. from an INI section) to a config."""
    updates: dict[str, object] = {}
    idm_kw: dict[str, float] = {}
    mobil_kw: dict[str, float] = {}
    ramp_kw: dict[str, float] = {}
    for key, raw in options.items():
        key = key.strip().lower()
        if key in _SCENARIO_FLOAT_KEYS:
            updates[key] = float(raw)
        elif key in _SCENARIO_INT_KEYS:
            updates[key] = int(raw)
        elif key == "respawn_overtaken":
            updates[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key == "speed_grid":
            updates[key] = tuple(float(tok) for tok in raw.replace(",", " ").split())
        elif key.startswith("idm."):
            idm_kw[key[4:]] = float(raw)
        elif key.startswith("mobil."):
            mobil_kw[key[6:]] = float(raw)
        elif key in ("ramp_length", "junction_position"):
            ramp_kw[key] = float(raw)
        else:
            raise ConfigError(f"unknown scenario config key {key!r}")
    if idm_kw or mobil_kw:
        traffic = TrafficModelParams(
            idm=replace(config.traffic.idm, **idm_kw),
            mobil=replace(config.traffic.mobil, **mobil_kw),
        )
        updates["traffic"] = traffic
    if ramp_kw:
        base = config.merge_ramp or MergeRamp()
        updates["merge_ramp"] = replace(base, **ramp_kw)
    out = replace(config, **updates)
    out.validate()
    return out


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """JSON-friendly snapshot of every scenario key (used by run manifests)."""
    out = {
        "kind": config.kind.value,
        "lane_count": config.lane_count,
        "traffic_count": config.traffic_count,
        "horizon_steps": config.horizon_steps,
        "policy_hz": config.policy_hz,
        "sim_hz": config.sim_hz,
        "v_min": config.v_min,
        "v_max": config.v_max,
        "spawn_spacing_mean": config.spawn_spacing_mean,
        "platoon_break_prob": config.platoon_break_prob,
        "platoon_gap_scale": config.platoon_gap_scale,
        "merge_ramp": None
        if config.merge_ramp is None
        else {"ramp_length": config.merge_ramp.ramp_length,
              "junction_position": config.merge_ramp.junction_position},
        "lane_width": config.lane_width,
        "vehicle_length": config.vehicle_length,
        "vehicle_width": config.vehicle_width,
        "speed_grid": list(config.speed_grid),
        "ego_start_lane": config.ego_start_lane,
        "ego_start_speed": config.ego_start_speed,
        "ego_speed_kp": config.ego_speed_kp,
        "ego_accel_max": config.ego_accel_max,
        "tau_lat": config.tau_lat,
        "idm": vars(config.traffic.idm).copy(),
        "mobil": vars(config.traffic.mobil).copy(),
        "traffic_speed_lo": config.traffic_speed_lo,
        "traffic_speed_hi": config.traffic_speed_hi,
        "b_hard": config.b_hard,
        "respawn_overtaken": config.respawn_overtaken,
        "ttc_cap": config.ttc_cap,
    }
    return out


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Inverse of :func:`scenario_to_dict`."""
    config = ScenarioConfig(
        kind=ScenarioKind(data["kind"]),
        lane_count=data["lane_count"],
        traffic_count=data["traffic_count"],
        horizon_steps=data["horizon_steps"],
        policy_hz=data["policy_hz"],
        sim_hz=data["sim_hz"],
        v_min=data["v_min"],
        v_max=data["v_max"],
        spawn_spacing_mean=data["spawn_spacing_mean"],
        platoon_break_prob=data["platoon_break_prob"],
        platoon_gap_scale=data["platoon_gap_scale"],
        merge_ramp=None if data["merge_ramp"] is None else MergeRamp(**data["merge_ramp"]),
        lane_width=data["lane_width"],
        vehicle_length=data["vehicle_length"],
        vehicle_width=data["vehicle_width"],
        speed_grid=tuple(data["speed_grid"]),
        ego_start_lane=data["ego_start_lane"],
        ego_start_speed=data["ego_start_speed"],
        ego_speed_kp=data["ego_speed_kp"],
        ego_accel_max=data["ego_accel_max"],
        tau_lat=data["tau_lat"],
        traffic=TrafficModelParams(idm=IdmParams(**data["idm"]), mobil=MobilParams(**data["mobil"])),
        traffic_speed_lo=data["traffic_speed_lo"],
        traffic_speed_hi=data["traffic_speed_hi"],
        b_hard=data["b_hard"],
        respawn_overtaken=data["respawn_overtaken"],
        ttc_cap=data["ttc_cap"],
    )
    config.validate()
    return config


def load_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    """Load an INI config file into a {section: {key: value}} mapping.

    Recognized sections: [scenario], [reward], [dqn], [shaping], [llm], [eval].
    """
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file not found or unreadable: {path}")
    known = {"scenario", "reward", "dqn", "shaping", "llm", "eval"}
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        out[section] = dict(parser.items(section))
    return out
