import math
from dataclasses import replace

import numpy as np
import pytest

from shwy.scenario import ConfigError, MergeRamp, ScenarioKind, scenario_preset
from shwy.simulate import (
    MetaAction,
    SimContractError,
    SpawnError,
    check_collision,
    mobil_lane_change,
    reset,
    step,
)


def empty_road(speed=25.0, lane=2, name="highway"):
    config = replace(scenario_preset(name), traffic_count=0,
                     ego_start_lane=lane, ego_start_speed=speed)
    return config, reset(config, 0)


class TestReset:
    def test_same_seed_bit_identical(self):
        config = scenario_preset("highway")
        assert reset(config, 7) == reset(config, 7)

    def test_different_seed_differs(self):
        config = scenario_preset("highway")
        assert reset(config, 7) != reset(config, 8)

    def test_empty_traffic(self):
        _, state = empty_road()
        assert state.traffic == []
        assert state.n_vehicles == 1

    def test_merge_seed3_one_ramp_vehicle_and_min_gaps(self):
        config = scenario_preset("merge")
        state = reset(config, 3)
        ramp = [v for v in state.traffic if v.lane_index == config.ramp_index]
        assert len(ramp) == 1
        # exhaustive pairwise same-lane bumper-gap check against IDM s0
        s0 = config.traffic.idm.s0
        vehicles = [state.ego] + state.traffic
        for a in vehicles:
            for b in vehicles:
                if a.id >= b.id or a.lane_index != b.lane_index:
                    continue
                gap = abs(a.longitudinal_pos - b.longitudinal_pos) - 0.5 * (a.length + b.length)
                assert gap >= s0 - 1e-9

    def test_merge_zero_traffic_zero_ramp_vehicles(self):
        config = replace(scenario_preset("merge"), traffic_count=0)
        state = reset(config, 3)
        assert state.traffic == []

    def test_rejects_unfittable_spacing(self):
        config = replace(scenario_preset("highway"), spawn_spacing_mean=6.0)
        with pytest.raises(SpawnError):
            reset(config, 0)

    def test_no_initial_overlap_across_seeds(self):
        for name in ("highway", "highway-fast", "merge"):
            config = scenario_preset(name)
            for seed in range(5):
                assert not check_collision(reset(config, seed))

    def test_invalid_configs_rejected(self):
        base = scenario_preset("highway")
        with pytest.raises(ConfigError):
            replace(base, lane_count=1).validate()
        with pytest.raises(ConfigError):
            replace(base, sim_hz=10.0, policy_hz=3.0).validate()
        with pytest.raises(ConfigError):
            replace(base, v_min=30.0, v_max=30.0).validate()
        with pytest.raises(ConfigError):
            replace(base, merge_ramp=MergeRamp()).validate()  # ramp without merge kind
        with pytest.raises(ConfigError):
            replace(scenario_preset("merge"), merge_ramp=None).validate()


class TestStep:
    def test_idle_empty_road_holds_speed_and_lane(self):
        _, state = empty_road()
        state, info = step(state, MetaAction.IDLE)
        assert info.ego_speed_after == pytest.approx(25.0, abs=1e-9)
        assert not info.ego_lane_changed
        assert not info.collided_now

    def test_faster_moves_target_one_notch_and_accelerates(self):
        _, state = empty_road()
        state, info = step(state, MetaAction.FASTER)
        assert float(state.tgt_speed[0]) == 30.0
        assert info.ego_speed_after > 25.0

    def test_slower_moves_target_down(self):
        _, state = empty_road()
        step(state, MetaAction.SLOWER)
        assert float(state.tgt_speed[0]) == 20.0

    def test_speed_grid_clamps_at_ends(self):
        _, state = empty_road()
        for _ in range(3):
            step(state, MetaAction.FASTER)
        assert float(state.tgt_speed[0]) == 30.0
        for _ in range(6):
            step(state, MetaAction.SLOWER)
        assert float(state.tgt_speed[0]) == 20.0

    def test_lane_left_at_lane_zero_clamps(self):
        _, state = empty_road(lane=0)
        state, info = step(state, MetaAction.LANE_LEFT)
        assert int(state.tgt_lane[0]) == 0
        assert not info.ego_lane_changed

    def test_lane_right_at_last_lane_clamps(self):
        _, state = empty_road(lane=3)
        step(state, MetaAction.LANE_RIGHT)
        assert int(state.tgt_lane[0]) == 3

    def test_lane_change_completes_and_is_counted_once(self):
        config, state = empty_road(lane=2)
        state, info = step(state, MetaAction.LANE_LEFT)
        changes = info.ego_lane_changes
        for _ in range(3):
            state, info = step(state, MetaAction.IDLE)
            changes += info.ego_lane_changes
        assert int(state.lane_idx[0]) == 1
        assert changes == 1
        assert abs(float(state.lat[0]) - config.lane_center(1)) < 0.2

    def test_step_after_collision_is_contract_error(self):
        config = scenario_preset("highway")
        state = reset(config, 0)
        while not state.collided and state.step_count < config.horizon_steps:
            state, _ = step(state, MetaAction.FASTER)
        assert state.collided  # speeding into traffic must eventually collide
        with pytest.raises(SimContractError):
            step(state, MetaAction.IDLE)

    def test_step_after_horizon_is_contract_error(self):
        config, state = empty_road()
        for _ in range(config.horizon_steps):
            state, _ = step(state, MetaAction.IDLE)
        with pytest.raises(SimContractError):
            step(state, MetaAction.IDLE)

    def test_collision_is_sticky(self):
        config = scenario_preset("highway")
        state = reset(config, 1)
        while not state.collided and state.step_count < config.horizon_steps:
            state, _ = step(state, MetaAction.FASTER)
        assert state.collided
        assert check_collision(state)


class TestDeterminismAndInvariants:
    def test_replay_bit_identical_trajectory(self):
        config = scenario_preset("highway-fast")
        rng = np.random.default_rng(5)
        actions = [MetaAction(int(a)) for a in rng.integers(0, 5, size=config.horizon_steps)]

        def trajectory():
            state = reset(config, 11)
            states = [state.copy()]
            for action in actions:
                if state.collided or state.step_count >= config.horizon_steps:
                    break
                state, _ = step(state, action)
                states.append(state.copy())
            return states

        for a, b in zip(trajectory(), trajectory()):
            assert a == b

    def test_speed_box_and_lane_attribution(self):
        config = scenario_preset("highway")
        rng = np.random.default_rng(9)
        for seed in range(3):
            state = reset(config, seed)
            while not state.collided and state.step_count < config.horizon_steps:
                state, _ = step(state, MetaAction(int(rng.integers(0, 5))))
                assert 0.0 <= float(state.speed[0]) <= config.v_max + 2.0
                for i in range(state.n_vehicles):
                    lat = float(state.lat[i])
                    lanes = list(range(config.lane_count))
                    if config.merge_ramp is not None and float(state.pos[i]) <= config.merge_ramp.junction_position:
                        lanes.append(config.ramp_index)
                    best = min(lanes, key=lambda L: abs(lat - config.lane_center(L)))
                    assert int(state.lane_idx[i]) == best

    def test_merge_ramp_index_unreachable_past_junction(self):
        config = scenario_preset("merge")
        for seed in range(8):
            state = reset(config, seed)
            while not state.collided and state.step_count < config.horizon_steps:
                state, _ = step(state, MetaAction.IDLE)
                junction = config.merge_ramp.junction_position
                for i in range(state.n_vehicles):
                    if float(state.pos[i]) > junction:
                        assert int(state.lane_idx[i]) < config.lane_count

    def test_merge_ramp_vehicle_eventually_merges(self):
        config = scenario_preset("merge")
        merged = 0
        for seed in range(8):
            state = reset(config, seed)
            ramp_id = next((v.id for v in state.traffic if v.lane_index == config.ramp_index), None)
            assert ramp_id is not None
            while not state.collided and state.step_count < config.horizon_steps:
                state, _ = step(state, MetaAction.SLOWER)
            idx = int(np.nonzero(state.ids == ramp_id)[0][0])
            if int(state.lane_idx[idx]) < config.lane_count:
                merged += 1
        assert merged >= 6  # merging must be the norm, not a fluke


class TestCheckCollision:
    def test_gap_means_no_collision(self):
        _, state = empty_road()
        assert not check_collision(state)

    def test_mid_change_straddle_overlap_detected(self):
        config = replace(scenario_preset("highway"), traffic_count=1)
        state = reset(config, 0)
        # ego straddling lanes 1/2, target vehicle centered in lane 1 nearby
        state.pos[0] = 0.0
        state.lat[0] = config.lane_center(1) + 1.5
        state.pos[1] = 3.0
        state.lat[1] = config.lane_center(1)
        assert check_collision(state)
        state.pos[1] = 5.5  # half-length sum is 5.0: clear longitudinally
        assert not check_collision(state)


class TestMobilOp:
    def test_kernel_and_op_agree_on_settled_scene(self):
        # one decider with a slow leader and a free left lane
        config = replace(scenario_preset("highway"), traffic_count=2)
        state = reset(config, 0)
        state.pos[0] = -400.0
        state.lat[0] = config.lane_center(0)
        state.lane_idx[0] = 0
        state.tgt_lane[0] = 0
        # vehicle 1: the decider in lane 2; vehicle 2: slow leader ahead of it
        state.pos[1] = 0.0
        state.lat[1] = config.lane_center(2)
        state.lane_idx[1] = 2
        state.tgt_lane[1] = 2
        state.speed[1] = state.tgt_speed[1] = 28.0
        state.pos[2] = 25.0
        state.lat[2] = config.lane_center(2)
        state.lane_idx[2] = 2
        state.tgt_lane[2] = 2
        state.speed[2] = state.tgt_speed[2] = 18.0

        proposal = mobil_lane_change(state, vehicle_id=1)
        assert proposal in (1, 3)
        after, _ = step(state.copy(), MetaAction.IDLE)
        assert int(after.tgt_lane[1]) == proposal
