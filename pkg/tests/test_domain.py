import numpy as np
import pytest
from hypothesis import given, strategies as st

from hiercl.domain import (
    Conf,
    EnergyLedger,
    Sample,
    SwapPlan,
    Task,
    validate_stream,
)
from conftest import make_sample, make_task


def test_sample_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        Sample(id=1, class_label=0, features=np.zeros(4, np.float32), size_bytes=0)


def test_sample_rejects_matrix_features():
    with pytest.raises(ValueError):
        Sample(id=1, class_label=0, features=np.zeros((2, 2), np.float32), size_bytes=8)


def test_task_label_must_be_in_class_set():
    s = make_sample(0, 3)
    with pytest.raises(ValueError):
        Task(task_id=1, samples=(s,), class_set=frozenset({1, 2}))


def test_task_ordinal_starts_at_one():
    with pytest.raises(ValueError):
        Task(task_id=0, samples=(), class_set=frozenset())


def test_conf_validation():
    with pytest.raises(ValueError):
        Conf(sb_size=-1, em_size=10)
    with pytest.raises(ValueError):
        Conf(sb_size=0, em_size=0)
    assert Conf(500, 1000).total == 1500
    assert Conf(500, 1000).on_grid(500)
    assert not Conf(500, 1200).on_grid(500)


class TestSwapPlan:
    def test_full_plan(self):
        p = SwapPlan.from_parts(1, 1.0)
        assert p.ratio == 1.0 and p.interval_epochs == 1

    def test_sub_knee_pins_interval(self):
        with pytest.raises(ValueError):
            SwapPlan(ratio=0.1, interval_epochs=3, percent_per_firing=0.3)

    def test_above_knee_requires_full_percent(self):
        with pytest.raises(ValueError):
            SwapPlan.from_parts(2, 0.9)  # ratio 0.45 but partial firing

    def test_disabled_plan(self):
        p = SwapPlan.disabled()
        assert not p.enabled
        assert p.ratio == 0.0 and p.percent_per_firing == 0.0

    def test_identity_enforced(self):
        with pytest.raises(ValueError):
            SwapPlan(ratio=0.33, interval_epochs=3, percent_per_firing=1.0)

    @given(st.integers(min_value=1, max_value=5))
    def test_full_percent_intervals_valid(self, interval):
        p = SwapPlan.from_parts(interval, 1.0)
        assert p.percent_per_firing == 1.0
        assert p.ratio * p.interval_epochs == p.percent_per_firing


class TestEnergyLedger:
    def test_total_is_sum_of_components(self):
        led = EnergyLedger()
        led.add("gpu_dynamic", 5.0)
        led.add("static", 2.0)
        led.add("io", 0.25)
        led.add("ram", 0.1)
        led.add("profiling", 1.0)
        assert led.total == pytest.approx(8.35, rel=1e-12)
        d = led.as_dict()
        assert d["total"] == pytest.approx(
            sum(d[k] for k in ("gpu_dynamic", "static", "io", "ram", "profiling")),
            rel=1e-12,
        )

    def test_entries_are_monotone(self):
        led = EnergyLedger()
        with pytest.raises(ValueError):
            led.add("io", -1.0)
        with pytest.raises(KeyError):
            led.add("flux_capacitor", 1.0)
        with pytest.raises(ValueError):
            led.advance_time(-0.5)


class TestValidateStream:
    def test_disjoint_stream_is_valid(self):
        tasks = [
            make_task(t, range((t - 1) * 3, t * 3), per_class=4, start_id=t * 100)
            for t in range(1, 11)
        ]
        assert validate_stream(tasks).ok

    def test_shared_class_reported(self):
        t1 = make_task(1, [1, 2, 3], per_class=2, start_id=0)
        t2 = make_task(2, [3, 4, 5], per_class=2, start_id=50)
        report = validate_stream([t1, t2])
        assert not report.ok
        assert any(i.kind == "class_overlap" and "class 3" in i.detail for i in report.issues)

    def test_shared_class_ok_when_domain_incremental(self):
        t1 = make_task(1, [1, 2], per_class=2, start_id=0)
        t2 = make_task(2, [1, 2], per_class=2, start_id=50)
        assert validate_stream([t1, t2], domain_incremental=True).ok

    def test_empty_task_rejected(self):
        t1 = make_task(1, [1], per_class=2, start_id=0)
        empty = Task(task_id=2, samples=(), class_set=frozenset())
        report = validate_stream([t1, empty])
        assert not report.ok
        assert any(i.kind == "empty_task" for i in report.issues)

    def test_empty_sequence_raises(self):
        with pytest.raises(ValueError):
            validate_stream([])

    def test_dim_and_size_mismatches(self):
        a = make_sample(0, 1, dim=4)
        b = make_sample(1, 2, dim=6)
        c = Sample(id=2, class_label=3, features=np.zeros(4, np.float32), size_bytes=999)
        tasks = [
            Task.from_samples(1, [a]),
            Task.from_samples(2, [b]),
            Task.from_samples(3, [c]),
        ]
        report = validate_stream(tasks)
        kinds = {i.kind for i in report.issues}
        assert "dim_mismatch" in kinds
        assert "size_bytes_mismatch" in kinds
