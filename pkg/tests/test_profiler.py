import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiercl.domain import Conf, EnergyLedger
from hiercl.learner import CostModel, init_learner, state_digest, train_epoch
from hiercl.profiler import (
    ProfilerConfig,
    build_search_space,
    draw_covered_subsample,
    evaluate_conf,
    first_task_reference,
    nearest_conf,
    profile_task,
    sample_confs,
)
from hiercl.learner import checkpoint
from conftest import make_sample, make_task


class TestSearchSpace:
    def test_brute_enumeration_oracle(self):
        space = build_search_space(2000, task_size=1500, step=500)
        # independent double loop
        expected = set()
        for sb in (500, 1000, 1500):
            for em in range(0, 2001, 500):
                if sb + em <= 2000:
                    expected.add((sb, em))
        assert {(c.sb_size, c.em_size) for c in space} == expected
        assert len(space) == 9

    def test_budget_equals_step(self):
        assert build_search_space(500, task_size=1500, step=500) == [Conf(500, 0)]

    def test_small_task_bounds_sb(self):
        space = build_search_space(5000, task_size=500, step=500)
        assert max(c.sb_size for c in space) == 500

    def test_budget_below_step_rejected(self):
        with pytest.raises(ValueError):
            build_search_space(400, task_size=1000, step=500)

    @given(
        budget=st.integers(min_value=1, max_value=40),
        task=st.integers(min_value=1, max_value=20_000),
        step_units=st.sampled_from([100, 250, 500]),
    )
    @settings(max_examples=60, deadline=None)
    def test_grid_arithmetic(self, budget, task, step_units):
        budget_samples = budget * step_units
        space = build_search_space(budget_samples, task, step_units)
        assert space
        for c in space:
            assert c.sb_size + c.em_size <= budget_samples
            assert c.sb_size % step_units == 0
            assert c.em_size % step_units == 0
            assert c.sb_size >= step_units


class TestSampleConfs:
    def test_fourteen_from_larger_space(self):
        space = build_search_space(10_000, task_size=5000, step=500)
        assert len(space) > 14
        picked = sample_confs(space, 14, np.random.default_rng(0))
        assert len(picked) == len(set(picked)) == 14

    def test_small_space_returns_all(self):
        space = build_search_space(1000, task_size=1000, step=500)
        picked = sample_confs(space, 14, np.random.default_rng(0))
        assert picked == space

    def test_reference_always_included(self):
        space = build_search_space(10_000, task_size=5000, step=500)
        ref = Conf(500, 9500)
        for seed in range(20):
            picked = sample_confs(space, 5, np.random.default_rng(seed), reference=ref)
            assert ref in picked and len(picked) == 5

    def test_seed_stability(self):
        space = build_search_space(10_000, task_size=5000, step=500)
        a = sample_confs(space, 14, np.random.default_rng(42))
        b = sample_confs(space, 14, np.random.default_rng(42))
        assert a == b


class TestReferenceConf:
    def test_first_task_splits_budget(self):
        ref = first_task_reference(task_size=2000, budget_samples=5000, step=500)
        assert ref == Conf(2000, 2500)

    def test_first_task_small_task(self):
        ref = first_task_reference(task_size=300, budget_samples=5000, step=500)
        assert ref == Conf(500, 2500)

    def test_nearest_prefers_l1_distance(self):
        space = build_search_space(3000, task_size=3000, step=500)
        assert nearest_conf(space, Conf(1000, 1500)) == Conf(1000, 1500)
        got = nearest_conf(space, Conf(2600, 2600))
        assert got.total <= 3000
        # closest grid point under the budget plane
        assert abs(got.sb_size - 2600) + abs(got.em_size - 2600) == min(
            abs(c.sb_size - 2600) + abs(c.em_size - 2600) for c in space
        )


class TestCoverage:
    def test_every_pool_class_represented(self):
        rng = np.random.default_rng(0)
        pool = [make_sample(i, i % 7) for i in range(140)]
        for n in (3, 7, 10, 50):
            picked = draw_covered_subsample(pool, n, rng)
            assert {s.class_label for s in picked} == set(range(7))

    def test_topup_when_draw_too_small(self):
        rng = np.random.default_rng(0)
        pool = [make_sample(i, i % 10) for i in range(100)]
        picked = draw_covered_subsample(pool, 2, rng)
        assert {s.class_label for s in picked} == set(range(10))
        assert len(picked) >= 10

    def test_no_duplicates(self):
        rng = np.random.default_rng(1)
        pool = [make_sample(i, i % 5) for i in range(50)]
        picked = draw_covered_subsample(pool, 20, rng)
        ids = [s.id for s in picked]
        assert len(ids) == len(set(ids))


def small_profile_setup(seed=0, budget=2000, with_old=True):
    task = make_task(1, range(4), per_class=100, start_id=0, dim=8)
    probe = [make_sample(10_000 + i, i % 4, dim=8) for i in range(40)]
    em_pool = {}
    if with_old:
        em_pool = {
            c: [make_sample(20_000 + c * 100 + i, c, dim=8) for i in range(80)]
            for c in (90, 91)
        }
        probe += [make_sample(30_000 + i, 90 + i % 2, dim=8) for i in range(20)]
    state = init_learner(8, hidden_width=8, seed=seed)
    if with_old:
        # the live model has seen the old classes
        batches = [[s for ss in em_pool.values() for s in ss[:4]]]
        train_epoch(state, batches, 0.1)
    cfg = ProfilerConfig(conf_sample_size=6, warmup_epochs=2, profile_epochs=2, subsample=0.1)
    return state, task, em_pool, probe, cfg


def run_profile(state, task, em_pool, probe, cfg, seed=7, budget=2000):
    return profile_task(
        live_state=state,
        task_samples=task.samples,
        em_pool_by_class=em_pool,
        probe_samples=probe,
        budget_samples=budget,
        step=500,
        reference_target=None,
        cfg=cfg,
        cost=CostModel(),
        full_epochs=10,
        learning_rate=0.1,
        batch_size=16,
        rng=np.random.default_rng(seed),
        ledger=EnergyLedger(),
    )


class TestProfileTask:
    def test_live_model_untouched(self):
        state, task, em_pool, probe, cfg = small_profile_setup()
        before = state_digest(state)
        run_profile(state, task, em_pool, probe, cfg)
        assert state_digest(state) == before

    def test_records_feasible_and_positive(self):
        state, task, em_pool, probe, cfg = small_profile_setup()
        outcome = run_profile(state, task, em_pool, probe, cfg)
        assert len(outcome.records) == min(cfg.conf_sample_size, outcome.space_size)
        for r in outcome.records:
            assert r.conf.total <= 2000
            assert r.energy_estimate > 0
            assert 0.0 <= r.accuracy_estimate <= 1.0
            assert r.epoch_measured == cfg.warmup_epochs + cfg.profile_epochs

    def test_same_seed_same_records(self):
        state, task, em_pool, probe, cfg = small_profile_setup()
        a = run_profile(state, task, em_pool, probe, cfg, seed=13)
        b = run_profile(state, task, em_pool, probe, cfg, seed=13)
        assert a.records == b.records

    def test_profiling_charges_overhead_only(self):
        state, task, em_pool, probe, cfg = small_profile_setup()
        ledger = EnergyLedger()
        profile_task(
            live_state=state,
            task_samples=task.samples,
            em_pool_by_class=em_pool,
            probe_samples=probe,
            budget_samples=2000,
            step=500,
            reference_target=None,
            cfg=cfg,
            cost=CostModel(),
            full_epochs=10,
            learning_rate=0.1,
            batch_size=16,
            rng=np.random.default_rng(3),
            ledger=ledger,
        )
        assert ledger.profiling > 0
        assert ledger.gpu_dynamic == ledger.io == ledger.ram == 0.0


class TestEvaluateConf:
    def test_energy_estimate_tracks_in_use_samples(self):
        state, task, em_pool, probe, cfg = small_profile_setup(with_old=False)
        cp = checkpoint(state)
        common = dict(
            task_samples=task.samples,
            em_pool_by_class={},
            probe_samples=probe,
            cfg=cfg,
            cost=CostModel(),
            full_epochs=10,
            learning_rate=0.1,
            batch_size=16,
        )
        rec_a, _ = evaluate_conf(
            cp, Conf(400, 0), rng=np.random.default_rng(0), ledger=EnergyLedger(), **common
        )
        rec_b, _ = evaluate_conf(
            cp, Conf(200, 0), rng=np.random.default_rng(0), ledger=EnergyLedger(), **common
        )
        assert rec_a.energy_estimate == pytest.approx(
            2 * rec_b.energy_estimate, rel=0.01
        )

    def test_oversized_em_conf_capped_by_pool(self):
        state, task, em_pool, probe, cfg = small_profile_setup()
        cp = checkpoint(state)
        pool_total = sum(len(v) for v in em_pool.values())
        rec_big, _ = evaluate_conf(
            cp, Conf(500, 1500), task.samples, em_pool, probe, cfg, CostModel(),
            10, 0.1, 16, np.random.default_rng(0), EnergyLedger(),
        )
        rec_fit, _ = evaluate_conf(
            cp, Conf(500, pool_total), task.samples, em_pool, probe, cfg, CostModel(),
            10, 0.1, 16, np.random.default_rng(0), EnergyLedger(),
        )
        assert rec_big.energy_estimate == rec_fit.energy_estimate


def test_cost_reduction_ratio_matches_analytic():
    """Sampled confs on subsampled data for few epochs vs exhaustive
    full-everything: the measured compute-unit ratio tracks
    (|space|/k) * (full_epochs/profile_epochs) * (1/subsample)."""
    state, task, em_pool, probe, _ = small_profile_setup(with_old=False)
    cfg = ProfilerConfig(conf_sample_size=3, warmup_epochs=1, profile_epochs=2, subsample=0.1)
    outcome = run_profile(state, task, em_pool, probe, cfg, seed=5, budget=2000)
    from hiercl.profiler import build_search_space

    space = build_search_space(2000, len(task.samples), 500)
    full_epochs = 10
    exhaustive = outcome.exhaustive_units(space, full_epochs, len(task.samples), 0)
    measured = exhaustive / outcome.evaluation_units
    analytic = (len(space) / 3) * (full_epochs / 2) * (1 / 0.1)
    assert measured == pytest.approx(analytic, rel=0.2)
