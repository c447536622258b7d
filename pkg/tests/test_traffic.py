import math

import pytest
from hypothesis import given, strategies as st

from shwy.scenario import IdmParams, MobilParams
from shwy.traffic import NO_NEIGHBOR, Neighbor, idm_acceleration, mobil_decision, mobil_gain

IDM = IdmParams(a_max=3.0, b_comf=2.0, s0=10.0, T=1.5, delta=4.0)
MOBIL = MobilParams(politeness=0.0, a_threshold=0.2, b_safe=2.0)


def idm_oracle(v, v_lead, gap, v0, p=IDM, b_hard=8.0):
    """Independent one-line evaluation of the IDM formula plus clamp."""
    s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b_comf))
    raw = p.a_max * (1.0 - (v / v0) ** p.delta - (s_star / gap) ** 2)
    return min(p.a_max, max(-b_hard, raw))


class TestIdm:
    def test_free_road_equilibrium_exact(self):
        assert abs(idm_acceleration(30.0, 0.0, math.inf, IDM, v0=30.0)) < 1e-9

    def test_standstill_free_road(self):
        assert idm_acceleration(0.0, 0.0, math.inf, IDM, v0=30.0) == IDM.a_max

    def test_derived_value_matches_scalar_oracle(self):
        got = idm_acceleration(25.0, 20.0, 30.0, IDM, v0=30.0)
        assert got == pytest.approx(idm_oracle(25.0, 20.0, 30.0, 30.0), abs=1e-12)

    def test_derived_value_unclamped_case(self):
        got = idm_acceleration(25.0, 20.0, 80.0, IDM, v0=30.0)
        expected = idm_oracle(25.0, 20.0, 80.0, 30.0)
        assert -8.0 < expected < 3.0  # genuinely exercises the formula, not the clamp
        assert got == pytest.approx(expected, abs=1e-12)

    def test_nonpositive_finite_gap_rejected(self):
        with pytest.raises(ValueError):
            idm_acceleration(20.0, 20.0, 0.0, IDM, v0=30.0)
        with pytest.raises(ValueError):
            idm_acceleration(20.0, 20.0, -3.0, IDM, v0=30.0)

    @given(
        v=st.floats(0.0, 35.0),
        v_lead=st.floats(0.0, 35.0),
        gap=st.floats(0.1, 500.0),
        v0=st.floats(15.0, 35.0),
    )
    def test_clamped_range(self, v, v_lead, gap, v0):
        a = idm_acceleration(v, v_lead, gap, IDM, v0=v0)
        assert -8.0 <= a <= IDM.a_max

    @given(
        v=st.floats(0.0, 35.0),
        v_lead=st.floats(0.0, 35.0),
        gap=st.floats(1.0, 400.0),
        extra=st.floats(0.5, 100.0),
    )
    def test_monotone_in_gap(self, v, v_lead, gap, extra):
        closer = idm_acceleration(v, v_lead, gap, IDM, v0=30.0)
        farther = idm_acceleration(v, v_lead, gap + extra, IDM, v0=30.0)
        assert farther >= closer


class TestMobil:
    def test_empty_world_no_change(self):
        got = mobil_decision(
            25.0, 30.0, 5.0, NO_NEIGHBOR, NO_NEIGHBOR,
            {0: (NO_NEIGHBOR, NO_NEIGHBOR)}, IDM, MOBIL,
        )
        assert got is None  # gain 0 is below the threshold

    def test_slow_leader_empty_lane_changes(self):
        slow_leader = Neighbor(speed=18.0, gap=25.0)
        got = mobil_decision(
            28.0, 30.0, 5.0, slow_leader, NO_NEIGHBOR,
            {1: (NO_NEIGHBOR, NO_NEIGHBOR)}, IDM, MOBIL,
        )
        assert got == 1
        # verify both MOBIL inequalities with direct IDM evaluations
        a_old = idm_acceleration(28.0, 18.0, 25.0, IDM, v0=30.0)
        a_new = idm_acceleration(28.0, 0.0, math.inf, IDM, v0=30.0)
        assert a_new - a_old > MOBIL.a_threshold  # incentive criterion
        # no new follower => safety criterion trivially satisfied

    def test_close_fast_follower_blocks_change(self):
        slow_leader = Neighbor(speed=18.0, gap=25.0)
        fast_follower = Neighbor(speed=30.0, gap=4.0, v0=30.0)
        got = mobil_decision(
            24.0, 30.0, 5.0, slow_leader, NO_NEIGHBOR,
            {1: (NO_NEIGHBOR, fast_follower)}, IDM, MOBIL,
        )
        assert got is None
        # the follower's imposed deceleration really does exceed b_safe
        nf_after = idm_acceleration(30.0, 24.0, 4.0, IDM, v0=30.0)
        assert nf_after < -MOBIL.b_safe

    def test_overlapping_candidate_is_infeasible(self):
        _, safe = mobil_gain(
            25.0, 30.0, 5.0, NO_NEIGHBOR, Neighbor(speed=25.0, gap=-1.0),
            NO_NEIGHBOR, NO_NEIGHBOR, IDM, MOBIL,
        )
        assert not safe

    def test_prefers_larger_incentive(self):
        # left lane has a slow leader, right lane is free: right wins
        me_leader = Neighbor(speed=15.0, gap=20.0)
        left = (Neighbor(speed=20.0, gap=30.0), NO_NEIGHBOR)
        right = (NO_NEIGHBOR, NO_NEIGHBOR)
        got = mobil_decision(
            28.0, 30.0, 5.0, me_leader, NO_NEIGHBOR, {0: left, 2: right}, IDM, MOBIL
        )
        assert got == 2

    def test_politeness_penalizes_imposed_braking(self):
        # a polite driver stays put when the change costs the new follower
        # more than the changer gains
        me_leader = Neighbor(speed=24.5, gap=60.0)
        follower = Neighbor(speed=29.0, gap=90.0, v0=30.0)
        candidates = {1: (NO_NEIGHBOR, follower)}
        selfish = mobil_decision(25.0, 30.0, 5.0, me_leader, NO_NEIGHBOR, candidates, IDM, MOBIL)
        polite = mobil_decision(
            25.0, 30.0, 5.0, me_leader, NO_NEIGHBOR, candidates,
            IDM, MobilParams(politeness=1.0, a_threshold=0.2, b_safe=2.0),
        )
        assert selfish == 1
        assert polite is None
