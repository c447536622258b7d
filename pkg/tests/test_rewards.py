import math

import pytest
from hypothesis import given, strategies as st

from shwy.rewards import (
    RewardBreakdown,
    ShapingKind,
    ShapingScheme,
    compose,
    env_reward,
    normalize_score,
    shape_averaged,
    shape_centered,
    shape_dense,
    speed_score,
)

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestEnvReward:
    def test_max_speed_no_collision_is_one(self):
        assert env_reward(30.0, False, a=0.4, b=1.0) == 1.0

    def test_collision_at_v_min_is_zero(self):
        assert env_reward(20.0, True, a=0.4, b=1.0) == 0.0

    def test_midpoint_value(self):
        # independent scalar evaluation: (0.4*0.5 + 1.0) / 1.4
        assert env_reward(25.0, False, a=0.4, b=1.0) == pytest.approx((0.2 + 1.0) / 1.4, abs=1e-12)

    def test_speed_clipped_outside_bounds(self):
        assert env_reward(50.0, False) == env_reward(30.0, False)
        assert env_reward(5.0, False) == env_reward(20.0, False)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            env_reward(25.0, False, a=0.0)
        with pytest.raises(ValueError):
            env_reward(25.0, False, b=-1.0)

    @given(v=st.floats(0.0, 60.0), collided=st.booleans())
    def test_range(self, v, collided):
        r = env_reward(v, collided)
        assert 0.0 <= r <= 1.0


class TestNormalizeScore:
    @pytest.mark.parametrize("raw,expected", [(10.0, 1.0), (0.0, 0.0), (7.0, 0.7)])
    def test_scaling(self, raw, expected):
        assert normalize_score(raw) == pytest.approx(expected, abs=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            normalize_score(10.5)
        with pytest.raises(ValueError):
            normalize_score(-0.1)

    @given(x=st.floats(0.0, 5.0), y=st.floats(0.0, 5.0))
    def test_linearity(self, x, y):
        assert normalize_score(x + y) == pytest.approx(
            normalize_score(x) + normalize_score(y), abs=1e-12
        )


class TestShapes:
    def test_dense_formula(self):
        assert shape_dense(0.5, 0.8, 1.0) == pytest.approx(1.3, abs=1e-12)

    def test_dense_zero_score_identity(self):
        assert shape_dense(0.37, 0.0, 1.0) == 0.37

    def test_dense_upper_bound(self):
        assert shape_dense(1.0, 1.0, 1.0) == 2.0

    def test_averaged_values(self):
        assert shape_averaged(0.6, 0.4) == pytest.approx(0.5, abs=1e-12)
        assert shape_averaged(0.3, 0.3) == pytest.approx(0.3, abs=1e-12)
        assert shape_averaged(1.0, 0.0) == 0.5

    def test_centered_neutral_defers_to_env(self):
        for r in (0.0, 0.25, 0.9):
            assert shape_centered(r, 0.5) == pytest.approx((r + 0.5) / 2.0, abs=1e-12)

    def test_centered_joint_max(self):
        assert shape_centered(1.0, 1.0) == 1.0

    def test_centered_derived_value(self):
        # independent evaluation: s~ = -0.2, raw = 0.48, (raw + 0.5)/2
        assert shape_centered(0.68, 0.3) == pytest.approx(0.49, abs=1e-12)

    @given(r=unit, s=unit, lam=st.floats(0.1, 3.0))
    def test_documented_ranges(self, r, s, lam):
        assert 0.0 <= shape_dense(r, s, lam) <= 1.0 + lam + 1e-12
        assert 0.0 <= shape_averaged(r, s) <= 1.0
        assert 0.0 <= shape_centered(r, s) <= 1.0

    @given(r=unit, s=unit, d=st.floats(1e-6, 0.5))
    def test_monotone_in_r_and_s(self, r, s, d):
        r2 = min(1.0, r + d)
        s2 = min(1.0, s + d)
        for f in (lambda a, b: shape_dense(a, b, 1.0), shape_averaged, shape_centered):
            assert f(r2, s) >= f(r, s)
            assert f(r, s2) >= f(r, s)

    @given(r1=unit, r2=unit, s=unit)
    def test_centered_preserves_env_ordering(self, r1, r2, s):
        if r1 <= r2:
            assert shape_centered(r1, s) <= shape_centered(r2, s)
        if r1 + 1e-9 < r2:  # strict once the difference survives rounding
            assert shape_centered(r1, s) < shape_centered(r2, s)

    def test_dense_disagrees_with_both_on_generic_inputs(self):
        r, s = 0.2, 0.9
        dense = shape_dense(r, s, 1.0)
        assert abs(dense - shape_averaged(r, s)) > 0.05
        assert abs(dense - shape_centered(r, s)) > 0.05

    @given(r=unit, s=unit)
    def test_averaged_and_centered_coincide_as_specified(self, r, s):
        # The specified centered map ((r + s - 0.5) + 0.5) / 2 reduces
        # algebraically to (r + s) / 2, i.e. the averaged scheme.  The two
        # are implemented independently; this pins the coincidence so any
        # later divergence is a deliberate, visible change.
        assert shape_centered(r, s) == pytest.approx(shape_averaged(r, s), abs=1e-12)


class TestCompose:
    def test_none_ignores_score(self):
        out = compose(ShapingScheme(ShapingKind.NONE), 0.7, None)
        assert out == RewardBreakdown(env_reward=0.7, llm_score_norm=None, total=0.7)

    def test_score_required_when_shaping(self):
        with pytest.raises(ValueError):
            compose(ShapingScheme.parse("dense"), 0.5, None)

    def test_dense_lambda_validation(self):
        with pytest.raises(ValueError):
            ShapingScheme.parse("dense", lam=0.0)

    @pytest.mark.parametrize(
        "name,expected",
        [("dense", 0.98), ("averaged", 0.49), ("centered", 0.49)],
    )
    def test_composition_totals(self, name, expected):
        out = compose(ShapingScheme.parse(name), 0.68, 0.3)
        assert out.total == pytest.approx(expected, abs=1e-12)


class TestSpeedScore:
    @pytest.mark.parametrize("v,expected", [(25.0, 0.5), (32.0, 1.0), (18.0, 0.0), (30.0, 1.0), (20.0, 0.0)])
    def test_clip_formula(self, v, expected):
        assert speed_score(v) == pytest.approx(expected, abs=1e-12)

    @given(v1=st.floats(0.0, 40.0), v2=st.floats(0.0, 40.0))
    def test_monotone(self, v1, v2):
        if v1 <= v2:
            assert speed_score(v1) <= speed_score(v2)
        assert 0.0 <= speed_score(v1) <= 1.0
