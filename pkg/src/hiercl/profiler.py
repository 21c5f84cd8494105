"""Low-overhead per-task profiling of candidate (SB, EM) confs.

Cost is cut from three directions: only a uniform sample of the search
space is profiled (default 14 confs), each conf trains on a small random
subsample of its data (default 5%), and all confs start from one shared
warmup checkpoint so nobody re-pays the noisy early epochs. The recorded
accuracy is the raw short-horizon value, not an extrapolation; the energy
estimate is the cost model's projection of a full-length run at that conf.

Profiling works entirely on copies and masked index views: the live model
and the live buffers are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Conf, EnergyLedger, ProfileRecord, Sample, round_up_to_step, round_down_to_step
from .learner import (
    Checkpoint,
    CostModel,
    LearnerState,
    charge_profiling,
    checkpoint,
    evaluate,
    restore,
    train_epoch,
)


@dataclass(frozen=True)
class ProfilerConfig:
    conf_sample_size: int = 14
    warmup_epochs: int = 10
    profile_epochs: int = 5
    subsample: float = 0.05
    coverage_attempts: int = 50

    def __post_init__(self):
        if self.conf_sample_size < 1:
            raise ValueError("need at least one conf to profile")
        if not (0.0 < self.subsample <= 1.0):
            raise ValueError("subsample must be a fraction in (0, 1]")


def build_search_space(budget_samples: int, task_size: int, step: int) -> list[Conf]:
    """All grid confs with sb in [step, min(task rounded up, budget)] and
    sb + em within the budget."""
    if step < 1:
        raise ValueError("step must be positive")
    if budget_samples < step:
        raise ValueError(f"budget {budget_samples} is below one step {step}")
    if task_size < 1:
        raise ValueError("task must contain samples")
    sb_max = min(round_up_to_step(task_size, step), round_down_to_step(budget_samples, step))
    space = []
    for sb in range(step, sb_max + 1, step):
        for em in range(0, budget_samples - sb + 1, step):
            space.append(Conf(sb_size=sb, em_size=em))
    return space


def sample_confs(
    space: Sequence[Conf],
    k: int,
    rng: np.random.Generator,
    reference: Conf | None = None,
) -> list[Conf]:
    """Uniform sample without replacement, always carrying the reference conf."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(space) <= k:
        picked = list(space)
    else:
        idx = rng.choice(len(space), size=k, replace=False)
        picked = [space[i] for i in sorted(idx)]
    if reference is not None and reference in space and reference not in picked:
        picked[-1] = reference
    return picked


def first_task_reference(task_size: int, budget_samples: int, step: int) -> Conf:
    """Bootstrap conf for the very first task: half the budget to EM, the
    rest to SB bounded by the task size."""
    half = max(step, round_down_to_step(budget_samples // 2, step))
    sb = min(round_up_to_step(task_size, step), half)
    sb = max(step, min(sb, budget_samples - min(half, budget_samples - step)))
    em = min(half, budget_samples - sb)
    return Conf(sb_size=sb, em_size=em)


def nearest_conf(space: Sequence[Conf], target: Conf) -> Conf:
    """Feasible conf closest to the target (L1 distance, lexicographic ties)."""
    if not space:
        raise ValueError("empty conf space")
    return min(
        space,
        key=lambda c: (
            abs(c.sb_size - target.sb_size) + abs(c.em_size - target.em_size),
            c,
        ),
    )


def _draw(pool: Sequence[Sample], n: int, rng: np.random.Generator) -> list[Sample]:
    if n >= len(pool):
        return list(pool)
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in sorted(idx)]


def draw_covered_subsample(
    pool: Sequence[Sample],
    n: int,
    rng: np.random.Generator,
    attempts: int = 50,
) -> list[Sample]:
    """Random subsample re-drawn until every class in the pool is represented.

    If the draw count cannot cover all classes (or luck runs out), the draw
    is topped up with one random sample per missing class so no class
    silently reports zero accuracy.
    """
    classes = {s.class_label for s in pool}
    picked = _draw(pool, n, rng)
    for _ in range(attempts):
        if {s.class_label for s in picked} == classes:
            return picked
        picked = _draw(pool, n, rng)
    missing = classes - {s.class_label for s in picked}
    picked_ids = {s.id for s in picked}
    for c in sorted(missing):
        cands = [s for s in pool if s.class_label == c and s.id not in picked_ids]
        if cands:
            extra = cands[int(rng.integers(len(cands)))]
            picked.append(extra)
            picked_ids.add(extra.id)
    return picked


def _balanced_take(
    by_class: dict[int, list[Sample]], total: int, rng: np.random.Generator
) -> list[Sample]:
    """Class-balanced random selection mirroring how EM fills to quota."""
    classes = sorted(c for c, pool in by_class.items() if pool)
    if not classes or total <= 0:
        return []
    base, rem = divmod(total, len(classes))
    out: list[Sample] = []
    for i, c in enumerate(classes):
        want = min(base + (1 if i < rem else 0), len(by_class[c]))
        out.extend(_draw(by_class[c], want, rng))
    return out


@dataclass
class ProfileOutcome:
    records: list[ProfileRecord]
    reference_conf: Conf
    space_size: int
    sampled_confs: list[Conf]
    # simulated compute units (sample-epochs) spent per phase
    warmup_units: int = 0
    evaluation_units: int = 0

    def exhaustive_units(self, space: Sequence[Conf], full_epochs: int,
                         task_size: int, em_available: int) -> int:
        """What full-length, full-data profiling of the whole space would cost."""
        total = 0
        for conf in space:
            n = min(conf.sb_size, task_size) + min(conf.em_size, em_available)
            total += n * full_epochs
        return total


def _shuffled_batches(
    data: list[Sample], batch_size: int, rng: np.random.Generator
) -> list[list[Sample]]:
    order = rng.permutation(len(data))
    shuffled = [data[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def evaluate_conf(
    cp: Checkpoint,
    conf: Conf,
    task_samples: Sequence[Sample],
    em_pool_by_class: dict[int, list[Sample]],
    probe_samples: Sequence[Sample],
    cfg: ProfilerConfig,
    cost: CostModel,
    full_epochs: int,
    learning_rate: float,
    batch_size: int,
    rng: np.random.Generator,
    ledger: EnergyLedger,
) -> tuple[ProfileRecord, int]:
    """Short training of one conf from the shared checkpoint.

    Returns the record plus the compute units (sample-epochs) it consumed.
    The data is a masked view: the first min(sb, task) stream samples and a
    balanced old-sample selection capped at the conf's EM size, both
    subsampled and coverage-checked.
    """
    state = restore(cp)
    em_available = sum(len(v) for v in em_pool_by_class.values())
    sb_inuse = min(conf.sb_size, len(task_samples))
    em_inuse = min(conf.em_size, em_available)

    data: list[Sample] = []
    if sb_inuse > 0:
        sb_view = list(task_samples[:sb_inuse])
        n_sb = max(1, round(cfg.subsample * sb_inuse))
        data.extend(draw_covered_subsample(sb_view, n_sb, rng, cfg.coverage_attempts))
    if em_inuse > 0:
        em_view = _balanced_take(em_pool_by_class, em_inuse, rng)
        n_em = max(1, round(cfg.subsample * em_inuse))
        data.extend(draw_covered_subsample(em_view, n_em, rng, cfg.coverage_attempts))
    if not data:
        raise ValueError(f"conf {conf} yields no profiling data")

    mean_loss = float("nan")
    for _ in range(cfg.profile_epochs):
        batches = _shuffled_batches(data, batch_size, rng)
        state, mean_loss = train_epoch(state, batches, learning_rate)

    acc = evaluate(state, probe_samples).average
    energy = cost.train_joules(sb_inuse + em_inuse, epochs=full_epochs)
    units = len(data) * cfg.profile_epochs
    charge_profiling(cost, len(data), cfg.profile_epochs, ledger)
    record = ProfileRecord(
        conf=conf,
        accuracy_estimate=acc,
        energy_estimate=energy,
        epoch_measured=cfg.warmup_epochs + cfg.profile_epochs,
    )
    return record, units


def profile_task(
    live_state: LearnerState,
    task_samples: Sequence[Sample],
    em_pool_by_class: dict[int, list[Sample]],
    probe_samples: Sequence[Sample],
    budget_samples: int,
    step: int,
    reference_target: Conf | None,
    cfg: ProfilerConfig,
    cost: CostModel,
    full_epochs: int,
    learning_rate: float,
    batch_size: int,
    rng: np.random.Generator,
    ledger: EnergyLedger,
) -> ProfileOutcome:
    """Profile one incoming task and return records for every sampled conf.

    The live model is copied for the warmup checkpoint and for every conf
    evaluation; the caller's state is never mutated.
    """
    task_size = len(task_samples)
    space = build_search_space(budget_samples, task_size, step)
    if reference_target is None:
        reference_target = first_task_reference(task_size, budget_samples, step)
    reference = nearest_conf(space, reference_target)
    confs = sample_confs(space, cfg.conf_sample_size, rng, reference)

    # shared warmup checkpoint at the reference conf, trained on full views
    warm = restore(checkpoint(live_state))
    ref_data: list[Sample] = list(task_samples[: min(reference.sb_size, task_size)])
    em_avail = sum(len(v) for v in em_pool_by_class.values())
    ref_em = min(reference.em_size, em_avail)
    if ref_em > 0:
        ref_data.extend(_balanced_take(em_pool_by_class, ref_em, rng))
    # warmup_epochs == 0 is ablation mode: confs ride on the raw live weights
    # and inherit the noisy early-epoch loss landscape
    warmup_units = 0
    if cfg.warmup_epochs > 0:
        for _ in range(cfg.warmup_epochs):
            batches = _shuffled_batches(ref_data, batch_size, rng)
            warm, _ = train_epoch(warm, batches, learning_rate)
        warmup_units = len(ref_data) * cfg.warmup_epochs
        charge_profiling(cost, len(ref_data), cfg.warmup_epochs, ledger)
    cp = checkpoint(warm)

    records: list[ProfileRecord] = []
    eval_units = 0
    for conf in confs:
        record, units = evaluate_conf(
            cp,
            conf,
            task_samples,
            em_pool_by_class,
            probe_samples,
            cfg,
            cost,
            full_epochs,
            learning_rate,
            batch_size,
            rng,
            ledger,
        )
        records.append(record)
        eval_units += units

    return ProfileOutcome(
        records=records,
        reference_conf=reference,
        space_size=len(space),
        sampled_confs=confs,
        warmup_units=warmup_units,
        evaluation_units=eval_units,
    )
