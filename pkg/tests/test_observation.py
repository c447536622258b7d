from dataclasses import replace

import numpy as np
import pytest

from shwy.observation import Observation, extract_observation, lane_ttc
from shwy.scenario import scenario_preset
from shwy.simulate import reset


def place(state, i, lane, pos, speed):
    state.pos[i] = pos
    state.lat[i] = state.config.lane_center(lane)
    state.lane_idx[i] = lane
    state.tgt_lane[i] = lane
    state.speed[i] = speed
    state.tgt_speed[i] = speed


@pytest.fixture
def scene():
    """Ego plus three parked-out-of-the-way traffic vehicles to position."""
    config = replace(scenario_preset("highway"), traffic_count=3)
    state = reset(config, 0)
    place(state, 0, 2, 0.0, 25.0)
    for i in (1, 2, 3):
        place(state, i, 0, -500.0 - 50.0 * i, 22.0)
    return state


class TestLaneTtc:
    def test_cap_boundary_50_over_5(self, scene):
        place(scene, 1, 2, 55.0, 20.0)  # bumper gap 50 at closure 5
        assert lane_ttc(scene, 2) == 10.0

    def test_opening_gap_returns_cap(self, scene):
        place(scene, 1, 2, 40.0, 29.0)
        assert lane_ttc(scene, 2) == 10.0

    def test_derived_12_over_6(self, scene):
        place(scene, 0, 2, 0.0, 28.0)
        place(scene, 1, 2, 17.0, 22.0)  # bumper gap 12, closure 6
        assert lane_ttc(scene, 2) == pytest.approx(2.0, abs=1e-12)

    def test_nonexistent_lane_is_zero(self, scene):
        assert lane_ttc(scene, -1) == 0.0
        assert lane_ttc(scene, scene.config.lane_count) == 0.0

    def test_vehicle_behind_is_ignored(self, scene):
        place(scene, 1, 2, -30.0, 35.0)
        assert lane_ttc(scene, 2) == 10.0

    def test_alongside_vehicle_is_not_a_leader(self, scene):
        place(scene, 1, 2, 4.0, 20.0)  # longitudinal overlap: gap would be < 0
        assert lane_ttc(scene, 2) == 10.0

    def test_nearest_leader_wins(self, scene):
        place(scene, 1, 2, 60.0, 20.0)
        place(scene, 2, 2, 23.0, 22.0)  # gap 18 at closure 3 -> 6 s
        assert lane_ttc(scene, 2) == pytest.approx(6.0, abs=1e-12)

    def test_monotone_in_gap(self, scene):
        place(scene, 1, 2, 40.0, 20.0)
        far = lane_ttc(scene, 2)
        place(scene, 1, 2, 25.0, 20.0)
        near = lane_ttc(scene, 2)
        assert near <= far


class TestExtractObservation:
    def test_empty_road_all_caps(self, scene):
        obs = extract_observation(scene)
        assert obs == Observation(25.0, 10.0, 10.0, 10.0)
        assert np.array_equal(obs.as_vector(), np.array([25.0, 10.0, 10.0, 10.0]))

    def test_leftmost_lane_left_sentinel(self, scene):
        place(scene, 0, 0, 0.0, 25.0)
        obs = extract_observation(scene)
        assert obs.ttc_left == 0.0

    def test_rightmost_lane_right_sentinel(self, scene):
        place(scene, 0, 3, 0.0, 25.0)
        obs = extract_observation(scene)
        assert obs.ttc_right == 0.0

    def test_three_vehicle_scene_matches_per_lane_oracle(self, scene):
        place(scene, 0, 2, 0.0, 27.0)
        place(scene, 1, 1, 30.0, 22.0)
        place(scene, 2, 2, 44.0, 21.0)
        place(scene, 3, 3, 12.0, 25.0)

        def oracle(lane):
            # brute force over all vehicles, independent of lane_ttc internals
            best = None
            for j in (1, 2, 3):
                if int(scene.lane_idx[j]) != lane:
                    continue
                gap = float(scene.pos[j]) - 2.5 - (float(scene.pos[0]) + 2.5)
                if gap <= 0:
                    continue
                if best is None or gap < best[0]:
                    best = (gap, float(scene.speed[j]))
            if best is None:
                return 10.0
            closure = 27.0 - best[1]
            if closure <= 0:
                return 10.0
            return min(10.0, best[0] / closure)

        obs = extract_observation(scene)
        assert obs.ttc_left == pytest.approx(oracle(1), abs=1e-12)
        assert obs.ttc_center == pytest.approx(oracle(2), abs=1e-12)
        assert obs.ttc_right == pytest.approx(oracle(3), abs=1e-12)

    def test_caps_and_nonnegativity_over_random_scenes(self):
        config = scenario_preset("highway")
        for seed in range(10):
            state = reset(config, seed)
            obs = extract_observation(state)
            for ttc in (obs.ttc_left, obs.ttc_center, obs.ttc_right):
                assert 0.0 <= ttc <= config.ttc_cap
            assert obs.ego_speed >= 0.0
