"""Multi-lane highway simulator with scripted traffic and meta-action ego control.

The world is a straight road in (longitudinal, lateral) coordinates.  The
ego is controlled through five discrete meta-actions; surrounding vehicles
follow IDM/MOBIL.  All stochasticity happens at :func:`reset` (and, when
enabled, traffic respawning), so a `(config, seed, action sequence)` triple
replays bit-identically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .scenario import ConfigError, ScenarioConfig, TrafficModelParams
from .traffic import NO_NEIGHBOR, Neighbor, mobil_decision


class MetaAction(enum.IntEnum):
    """The five discrete actions shared by every policy regime.

    The integer codes are a wire/persistence contract: prompts, parsers,
    model outputs and replay buffers all use exactly this mapping.
    """

    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


ACTION_NAMES = {a: a.name for a in MetaAction}


class SimContractError(RuntimeError):
    """Stepping a collided or exhausted episode."""


class SpawnError(ConfigError):
    """Traffic cannot be placed without violating the minimum-gap rule."""


@dataclass(frozen=True)
class VehicleState:
    id: int
    longitudinal_pos: float
    lateral_pos: float
    lane_index: int
    speed: float
    target_speed: float
    target_lane: int
    length: float
    width: float
    is_ego: bool


@dataclass(frozen=True)
class StepInfo:
    collided_now: bool
    ego_lane_changed: bool
    ego_speed_after: float
    ego_lane_changes: int
    speed_sum: float
    substeps: int
    traffic_contacts: int


@dataclass
class SimState:
    """Full world state; arrays are indexed with the ego at slot 0."""

    config: ScenarioConfig
    pos: np.ndarray
    lat: np.ndarray
    speed: np.ndarray
    tgt_speed: np.ndarray
    tgt_lane: np.ndarray
    lane_idx: np.ndarray
    length: np.ndarray
    width: np.ndarray
    ids: np.ndarray
    time_s: float = 0.0
    step_count: int = 0
    collided: bool = False
    traffic_contacts_total: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @property
    def n_vehicles(self) -> int:
        return int(self.pos.shape[0])

    def _vehicle(self, i: int) -> VehicleState:
        return VehicleState(
            id=int(self.ids[i]),
            longitudinal_pos=float(self.pos[i]),
            lateral_pos=float(self.lat[i]),
            lane_index=int(self.lane_idx[i]),
            speed=float(self.speed[i]),
            target_speed=float(self.tgt_speed[i]),
            target_lane=int(self.tgt_lane[i]),
            length=float(self.length[i]),
            width=float(self.width[i]),
            is_ego=(i == 0),
        )

    @property
    def ego(self) -> VehicleState:
        return self._vehicle(0)

    @property
    def traffic(self) -> list[VehicleState]:
        return [self._vehicle(i) for i in range(1, self.n_vehicles)]

    def copy(self) -> "SimState":
        clone_rng = np.random.Generator(type(self.rng.bit_generator)())
        clone_rng.bit_generator.state = self.rng.bit_generator.state
        return SimState(
            config=self.config,
            pos=self.pos.copy(),
            lat=self.lat.copy(),
            speed=self.speed.copy(),
            tgt_speed=self.tgt_speed.copy(),
            tgt_lane=self.tgt_lane.copy(),
            lane_idx=self.lane_idx.copy(),
            length=self.length.copy(),
            width=self.width.copy(),
            ids=self.ids.copy(),
            time_s=self.time_s,
            step_count=self.step_count,
            collided=self.collided,
            traffic_contacts_total=self.traffic_contacts_total,
            rng=clone_rng,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimState):
            return NotImplemented
        return (
            self.config == other.config
            and self.time_s == other.time_s
            and self.step_count == other.step_count
            and self.collided == other.collided
            and self.traffic_contacts_total == other.traffic_contacts_total
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("pos", "lat", "speed", "tgt_speed", "tgt_lane", "lane_idx", "length", "width", "ids")
            )
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )


def reset(config: ScenarioConfig, seed: int) -> SimState:
    """Build the initial world for `(config, seed)`; bit-identical per pair.

    Traffic is laid out lane by lane with bumper gaps drawn uniformly from
    ``[0.7, 1.3] * spawn_spacing_mean``; the configuration is rejected when
    the smallest possible draw would violate the IDM minimum gap ``s0``.
    """
    config.validate()
    s0 = config.traffic.idm.s0
    if config.traffic_count > 0 and 0.7 * config.spawn_spacing_mean < s0:
        raise SpawnError(
            f"spawn_spacing_mean {config.spawn_spacing_mean} cannot fit traffic "
            f"without violating the minimum gap s0={s0} (need >= {s0 / 0.7:.1f})"
        )

    rng = np.random.default_rng(seed)
    n = config.traffic_count + 1
    pos = np.zeros(n)
    lat = np.zeros(n)
    speed = np.zeros(n)
    tgt_speed = np.zeros(n)
    tgt_lane = np.zeros(n, dtype=np.int64)
    lane_idx = np.zeros(n, dtype=np.int64)
    length = np.full(n, config.vehicle_length)
    width = np.full(n, config.vehicle_width)
    ids = np.arange(n, dtype=np.int64)

    grid = config.speed_grid
    ego_target = min(grid, key=lambda v: abs(v - config.ego_start_speed))
    pos[0] = 0.0
    lat[0] = config.lane_center(config.ego_start_lane)
    lane_idx[0] = config.ego_start_lane
    tgt_lane[0] = config.ego_start_lane
    speed[0] = config.ego_start_speed
    tgt_speed[0] = ego_target

    start = 1
    if config.merge_ramp is not None and config.traffic_count >= 1:
        # One designated ramp vehicle, spawned upstream of the merge zone.
        ramp = config.merge_ramp
        zone_start = ramp.junction_position - ramp.ramp_length
        pos[1] = zone_start - rng.uniform(40.0, 110.0)
        lat[1] = config.lane_center(config.ramp_index)
        lane_idx[1] = config.ramp_index
        tgt_lane[1] = config.ramp_index
        speed[1] = tgt_speed[1] = rng.uniform(config.traffic_speed_lo, config.traffic_speed_hi)
        start = 2

    cursors = [float(rng.uniform(-40.0, 10.0)) for _ in range(config.lane_count)]
    protect_lo = pos[0] - (15.0 + config.vehicle_length)
    protect_hi = pos[0] + 30.0
    for i in range(start, n):
        lane = int(rng.integers(0, config.lane_count))
        gap = float(config.spawn_spacing_mean * rng.uniform(0.7, 1.3))
        center = cursors[lane]
        if lane == config.ego_start_lane and protect_lo <= center <= protect_hi:
            center = protect_hi
        pos[i] = center
        lat[i] = config.lane_center(lane)
        lane_idx[i] = lane
        tgt_lane[i] = lane
        speed[i] = tgt_speed[i] = rng.uniform(config.traffic_speed_lo, config.traffic_speed_hi)
        if rng.random() < config.platoon_break_prob:
            gap += float(config.platoon_gap_scale * config.spawn_spacing_mean * rng.uniform(0.8, 1.2))
        cursors[lane] = center + config.vehicle_length + gap

    # Cap initial speeds front-to-back per lane so no one spawns faster than
    # its column leader; lanes start near car-following equilibrium instead
    # of in a braking transient.
    for lane in range(config.lane_count):
        column = sorted(
            (i for i in range(start, n) if int(lane_idx[i]) == lane),
            key=lambda i: (-float(pos[i]), i),
        )
        cap = float("inf")
        for i in column:
            speed[i] = min(float(speed[i]), cap)
            cap = float(speed[i])

    state = SimState(
        config=config, pos=pos, lat=lat, speed=speed, tgt_speed=tgt_speed,
        tgt_lane=tgt_lane, lane_idx=lane_idx, length=length, width=width,
        ids=ids, rng=rng,
    )
    if _any_overlap(state):
        raise SpawnError("initial placement produced overlapping vehicles")
    return state


def _any_overlap(state: SimState) -> bool:
    n = state.n_vehicles
    for i in range(n):
        for j in range(i + 1, n):
            if _rect_overlap(state, i, j):
                return True
    return False


def _rect_overlap(state: SimState, i: int, j: int) -> bool:
    dp = abs(float(state.pos[i] - state.pos[j]))
    dl = abs(float(state.lat[i] - state.lat[j]))
    return dp < 0.5 * float(state.length[i] + state.length[j]) and dl < 0.5 * float(
        state.width[i] + state.width[j]
    )


def check_collision(state: SimState) -> bool:
    """True iff the ego rectangle currently overlaps any traffic rectangle."""
    return any(_rect_overlap(state, 0, j) for j in range(1, state.n_vehicles))


def _grid_notch(grid: tuple[float, ...], current: float, up: bool) -> float:
    if up:
        above = [g for g in grid if g > current + 1e-9]
        return min(above) if above else grid[-1]
    below = [g for g in grid if g < current - 1e-9]
    return max(below) if below else grid[0]


def _respawn_overtaken(state: SimState) -> None:
    # Teleport far-overtaken traffic ahead of the pack to keep density up.
    config = state.config
    cutoff = float(state.pos[0]) - 120.0
    for i in range(1, state.n_vehicles):
        if int(state.lane_idx[i]) == config.ramp_index:
            continue
        if float(state.pos[i]) < cutoff:
            lane = int(state.rng.integers(0, config.lane_count))
            gap = float(config.spawn_spacing_mean * state.rng.uniform(0.7, 1.3))
            state.pos[i] = float(np.max(state.pos)) + config.vehicle_length + gap
            state.lat[i] = config.lane_center(lane)
            state.lane_idx[i] = lane
            state.tgt_lane[i] = lane
            state.speed[i] = state.tgt_speed[i]


def step(state: SimState, action: MetaAction) -> tuple[SimState, StepInfo]:
    """Apply a meta-action and advance one policy step in place.

    FASTER/SLOWER move the ego's target speed one notch along the config's
    speed grid; LANE_LEFT/LANE_RIGHT move the target lane, clamped to the
    main carriageway.  Raises :class:`SimContractError` when the episode is
    already over.
    """
    if state.collided:
        raise SimContractError("cannot step a collided episode")
    if state.step_count >= state.config.horizon_steps:
        raise SimContractError("cannot step an exhausted episode")

    config = state.config
    action = MetaAction(action)
    if action is MetaAction.FASTER:
        state.tgt_speed[0] = _grid_notch(config.speed_grid, float(state.tgt_speed[0]), up=True)
    elif action is MetaAction.SLOWER:
        state.tgt_speed[0] = _grid_notch(config.speed_grid, float(state.tgt_speed[0]), up=False)
    elif action is MetaAction.LANE_LEFT:
        state.tgt_lane[0] = max(0, int(state.tgt_lane[0]) - 1)
    elif action is MetaAction.LANE_RIGHT:
        state.tgt_lane[0] = min(config.lane_count - 1, int(state.tgt_lane[0]) + 1)

    if config.respawn_overtaken:
        _respawn_overtaken(state)

    idm = config.traffic.idm
    mobil = config.traffic.mobil
    dt = 1.0 / config.sim_hz
    if config.merge_ramp is not None:
        has_ramp = 1
        junction = config.merge_ramp.junction_position
        zone_start = junction - config.merge_ramp.ramp_length
    else:
        has_ramp = 0
        junction = 0.0
        zone_start = 0.0

    collided_substep, substeps_done, speed_sum, ego_changes, contacts = kernel.advance(
        state.pos, state.lat, state.speed, state.tgt_speed, state.tgt_lane,
        state.lane_idx, state.length, state.width,
        config.substeps, dt, config.lane_count, config.lane_width,
        has_ramp, junction, zone_start,
        idm.a_max, idm.s0, idm.T, idm.delta,
        2.0 * math.sqrt(idm.a_max * idm.b_comf), config.b_hard,
        mobil.politeness, mobil.a_threshold, mobil.b_safe,
        config.ego_speed_kp, config.ego_accel_max,
        1.0 - math.exp(-dt / config.tau_lat),
    )

    collided_now = collided_substep >= 0
    state.collided = state.collided or collided_now
    state.step_count += 1
    state.time_s += substeps_done * dt
    state.traffic_contacts_total += contacts

    info = StepInfo(
        collided_now=collided_now,
        ego_lane_changed=ego_changes > 0,
        ego_speed_after=float(state.speed[0]),
        ego_lane_changes=ego_changes,
        speed_sum=speed_sum,
        substeps=substeps_done,
        traffic_contacts=contacts,
    )
    return state, info


def _occupies(state: SimState, j: int, lane: int) -> bool:
    return int(state.lane_idx[j]) == lane or int(state.tgt_lane[j]) == lane


def _leader_view(state: SimState, i: int, lane: int) -> Neighbor:
    best_gap = math.inf
    best_j = -1
    front = float(state.pos[i] + 0.5 * state.length[i])
    for j in range(state.n_vehicles):
        if j == i or not _occupies(state, j, lane):
            continue
        gap = float(state.pos[j] - 0.5 * state.length[j]) - front
        if 0.0 < gap < best_gap:
            best_gap = gap
            best_j = j
    if best_j < 0:
        return NO_NEIGHBOR
    return Neighbor(speed=float(state.speed[best_j]), gap=best_gap, v0=float(state.tgt_speed[best_j]))


def _follower_view(state: SimState, i: int, lane: int) -> Neighbor:
    best_gap = math.inf
    best_j = -1
    rear = float(state.pos[i] - 0.5 * state.length[i])
    for j in range(state.n_vehicles):
        if j == i or not _occupies(state, j, lane):
            continue
        gap = rear - float(state.pos[j] + 0.5 * state.length[j])
        if 0.0 < gap < best_gap:
            best_gap = gap
            best_j = j
    if best_j < 0:
        return NO_NEIGHBOR
    return Neighbor(speed=float(state.speed[best_j]), gap=best_gap, v0=float(state.tgt_speed[best_j]))


def _alongside_in_lane(state: SimState, i: int, lane: int) -> bool:
    front = float(state.pos[i] + 0.5 * state.length[i])
    rear = float(state.pos[i] - 0.5 * state.length[i])
    for j in range(state.n_vehicles):
        if j == i or not _occupies(state, j, lane):
            continue
        ahead_gap = float(state.pos[j] - 0.5 * state.length[j]) - front
        behind_gap = rear - float(state.pos[j] + 0.5 * state.length[j])
        if ahead_gap <= 0.0 and behind_gap <= 0.0:
            return True
    return False


def mobil_lane_change(
    state: SimState, vehicle_id: int, params: TrafficModelParams | None = None
) -> int | None:
    """Evaluate the MOBIL criterion for one vehicle against adjacent main lanes.

    Returns the proposed lane index, or ``None`` when no candidate passes
    both the acceleration-gain and follower-safety inequalities.
    """
    params = params or state.config.traffic
    idx = int(np.nonzero(state.ids == vehicle_id)[0][0])
    lane = int(state.lane_idx[idx])
    candidates: dict[int, tuple[Neighbor, Neighbor]] = {}
    for cand in (lane - 1, lane + 1):
        if 0 <= cand < state.config.lane_count and not _alongside_in_lane(state, idx, cand):
            candidates[cand] = (
                _leader_view(state, idx, cand),
                _follower_view(state, idx, cand),
            )
    if not candidates:
        return None
    return mobil_decision(
        float(state.speed[idx]), float(state.tgt_speed[idx]), float(state.length[idx]),
        _leader_view(state, idx, lane), _follower_view(state, idx, lane),
        candidates, params.idm, params.mobil, state.config.b_hard,
    )
