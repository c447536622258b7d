"""The 4-dimensional TTC observation: [ego speed, left TTC, center TTC, right TTC]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import SimState


@dataclass(frozen=True)
class Observation:
    """Fixed-order observation vector fed to policies and prompts."""

    ego_speed: float
    ttc_left: float
    ttc_center: float
    ttc_right: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.ego_speed, self.ttc_left, self.ttc_center, self.ttc_right], dtype=np.float64
        )


def lane_ttc(state: SimState, lane: int) -> float:
    """Time to collision against the nearest leader in ``lane``, in seconds.

    Capped to the config's ``ttc_cap``; the cap is also returned when there
    is no leader or the gap is opening.  A lane outside the main carriageway
    returns 0 ("do not go there").  "Ahead" is strict: a vehicle alongside
    the ego (longitudinal overlap) is a collision concern, not a TTC one.
    """
    config = state.config
    if lane < 0 or lane >= config.lane_count:
        return 0.0
    cap = config.ttc_cap
    ego_front = float(state.pos[0] + 0.5 * state.length[0])
    ego_speed = float(state.speed[0])
    best_gap = None
    best_speed = 0.0
    for j in range(1, state.n_vehicles):
        if int(state.lane_idx[j]) != lane:
            continue
        gap = float(state.pos[j] - 0.5 * state.length[j]) - ego_front
        if gap > 0.0 and (best_gap is None or gap < best_gap):
            best_gap = gap
            best_speed = float(state.speed[j])
    if best_gap is None:
        return cap
    closure = ego_speed - best_speed
    if closure <= 0.0:
        return cap
    ttc = best_gap / closure
    if ttc > cap:
        return cap
    if ttc < 0.0:
        return 0.0
    return ttc


def extract_observation(state: SimState) -> Observation:
    """Compose ego speed with the TTCs of the left, current, and right lanes."""
    lane = int(state.lane_idx[0])
    return Observation(
        ego_speed=float(state.speed[0]),
        ttc_left=lane_ttc(state, lane - 1),
        ttc_center=lane_ttc(state, lane),
        ttc_right=lane_ttc(state, lane + 1),
    )
