import pytest
from hypothesis import given, strategies as st

from hiercl.control import (
    ControllerConfig,
    SwapController,
    adjust_ratio,
    classify_io,
    plan_from_ratio,
)
from hiercl.domain import IoState, SwapPlan


class TestClassify:
    def test_low_rate_is_congested(self):
        assert classify_io(0.5, empty_epochs=0, current_ratio=1.0) is IoState.CONGESTED

    def test_empty_queue_with_headroom_is_idle(self):
        assert classify_io(None, empty_epochs=3, current_ratio=0.8) is IoState.IDLE

    def test_maxed_ratio_never_idle(self):
        assert classify_io(1.0, empty_epochs=5, current_ratio=1.0) is IoState.STABLE

    def test_sentinel_never_congested(self):
        # nothing issued: rate is the sentinel, not zero
        assert classify_io(None, empty_epochs=0, current_ratio=1.0) is IoState.STABLE

    def test_threshold_boundary(self):
        assert classify_io(0.90, 0, 1.0) is IoState.STABLE
        assert classify_io(0.8999, 0, 1.0) is IoState.CONGESTED


class TestAdjust:
    def test_congestion_halves(self):
        assert adjust_ratio(1.0, IoState.CONGESTED) == 0.5
        assert adjust_ratio(0.5, IoState.CONGESTED) == 0.25

    def test_idle_adds_ten_points(self):
        assert adjust_ratio(0.25, IoState.IDLE) == 0.25 + 0.10

    def test_idle_clamps_at_one(self):
        assert adjust_ratio(0.95, IoState.IDLE) == 1.0

    def test_stable_keeps_value(self):
        assert adjust_ratio(0.7, IoState.STABLE) == 0.7

    def test_floor_stops_silent_drift(self):
        r = 1.0
        for _ in range(20):
            r = adjust_ratio(r, IoState.CONGESTED)
        assert r == ControllerConfig().ratio_floor

    def test_exact_powers_of_two_until_floor(self):
        r = 1.0
        for k in range(1, 7):
            r = adjust_ratio(r, IoState.CONGESTED)
            assert r == 2.0 ** (-k)


class TestPlanFromRatio:
    @pytest.mark.parametrize(
        "ratio,interval,percent",
        [
            (1.0, 1, 1.0),
            (0.5, 2, 1.0),
            (0.25, 4, 1.0),
            (0.20, 5, 1.0),
            (0.10, 5, 0.5),
        ],
    )
    def test_mapping_table(self, ratio, interval, percent):
        plan = plan_from_ratio(ratio)
        assert plan.interval_epochs == interval
        assert plan.percent_per_firing == percent

    def test_sub_knee_is_exact(self):
        plan = plan_from_ratio(0.10)
        assert plan.ratio == 0.10
        assert plan.percent_per_firing / plan.interval_epochs == 0.10

    def test_derived_effective_ratio(self):
        # 5 * 0.10 = 0.5 and the effective per-epoch ratio is 0.5 / 5 = 0.10
        plan = plan_from_ratio(0.10)
        assert plan.percent_per_firing == 5 * 0.10
        assert plan.percent_per_firing / 5 == 0.10

    def test_nonpositive_ratio_never_fires(self):
        assert not plan_from_ratio(0.0).enabled
        assert not plan_from_ratio(-0.3).enabled

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            plan_from_ratio(1.5)

    def test_three_halvings_stay_above_knee_region(self):
        r = 1.0
        for _ in range(3):
            r = adjust_ratio(r, IoState.CONGESTED)
        assert r == 0.125
        plan = plan_from_ratio(r)
        assert plan.ratio >= 0.125

    @given(st.floats(min_value=0.001, max_value=1.0, allow_nan=False))
    def test_quantization_bound(self, ratio):
        plan = plan_from_ratio(ratio)
        if ratio < 0.20:
            assert plan.ratio == ratio
        else:
            k = plan.interval_epochs
            upper_gap = (1.0 / (k - 1) - 1.0 / k) if k > 1 else 0.5
            lower_gap = 1.0 / k - 1.0 / (k + 1)
            assert abs(plan.ratio - ratio) <= max(upper_gap, lower_gap) + 1e-12

    @given(st.floats(min_value=0.0001, max_value=1.0, allow_nan=False))
    def test_plan_identity_always_canonical(self, ratio):
        plan = plan_from_ratio(ratio)
        assert plan.percent_per_firing == plan.ratio * plan.interval_epochs


class TestRoundTrip:
    @given(st.integers(min_value=1, max_value=5))
    def test_full_percent_plans(self, interval):
        p = SwapPlan.from_parts(interval, 1.0)
        assert plan_from_ratio(p.ratio) == p

    @given(st.floats(min_value=1e-6, max_value=0.999, allow_nan=False))
    def test_partial_percent_plans(self, percent):
        p = SwapPlan.from_parts(5, percent)
        assert plan_from_ratio(p.ratio) == p


class TestController:
    def test_aimd_trace_under_double_congestion(self):
        ctl = SwapController(ratio=1.0)
        trace = [ctl.ratio]
        for epoch in (1, 2):
            state = ctl.classify(rate=0.5, empty_epochs=0)
            ctl.react(state, epoch)
            trace.append(ctl.ratio)
        assert trace == [1.0, 0.5, 0.25]

    def test_stable_records_nothing(self):
        ctl = SwapController(ratio=0.5)
        assert ctl.react(IoState.STABLE, 1) is None
        assert ctl.decisions == []

    def test_decision_log_shape(self):
        ctl = SwapController(ratio=1.0)
        ctl.react(IoState.CONGESTED, 7)
        d = ctl.decisions[0]
        assert (d.epoch, d.old_ratio, d.new_ratio) == (7, 1.0, 0.5)
        assert d.interval_epochs == 2 and d.percent_per_firing == 1.0
