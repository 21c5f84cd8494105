"""Experiment harness: synthetic task streams, baseline conf strategies,
and trace/report emission.

Streams are Gaussian class clusters, disjoint classes per task by default
(class-incremental); a domain-incremental mode reuses the class set and
drifts the cluster means instead. Generation is deterministic under the
spec seed and independent of the run seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import (
    Conf,
    ProfileRecord,
    Sample,
    Task,
    round_down_to_step,
    round_up_to_step,
)
from .runtime import ConfPolicy, RunConfig, RunReport, run_stream
from .selector import HIGHEST_UTILITY


@dataclass(frozen=True)
class StreamSpec:
    n_tasks: int = 10
    classes_per_task: int = 10
    samples_per_class: int = 200
    feature_dim: int = 32
    separation: float = 0.8     # scale of the class-cluster means (noise is unit)
    drift: float = 0.0          # per-task mean drift, for domain-incremental streams
    domain_incremental: bool = False
    test_fraction: float = 0.1  # held-out probe samples per class, never trained on
    size_bytes: int | None = None  # defaults to 4 bytes per feature
    seed: int = 0

    @property
    def sample_bytes(self) -> int:
        return self.size_bytes if self.size_bytes is not None else 4 * self.feature_dim

    @property
    def task_size(self) -> int:
        return self.classes_per_task * self.samples_per_class

    @property
    def n_classes(self) -> int:
        if self.domain_incremental:
            return self.classes_per_task
        return self.n_tasks * self.classes_per_task


@dataclass
class Stream:
    spec: StreamSpec
    tasks: list[Task]
    probe_sets: dict[int, list[Sample]]


def generate_stream(spec: StreamSpec) -> Stream:
    """Build a synthetic stream plus per-task held-out probe sets."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    next_id = 0
    tasks: list[Task] = []
    probe_sets: dict[int, list[Sample]] = {}
    test_per_class = max(1, round(spec.test_fraction * spec.samples_per_class))

    if spec.domain_incremental:
        base_means = rng.normal(0.0, 1.0, size=(spec.classes_per_task, spec.feature_dim))
        base_means *= spec.separation

    for t in range(1, spec.n_tasks + 1):
        if spec.domain_incremental:
            class_ids = list(range(spec.classes_per_task))
            base_means += spec.drift * rng.normal(
                0.0, 1.0, size=(spec.classes_per_task, spec.feature_dim)
            )
            means = base_means.copy()
        else:
            class_ids = [
                (t - 1) * spec.classes_per_task + c for c in range(spec.classes_per_task)
            ]
            means = spec.separation * rng.normal(
                0.0, 1.0, size=(spec.classes_per_task, spec.feature_dim)
            )

        train: list[Sample] = []
        probes: list[Sample] = []
        for ci, class_id in enumerate(class_ids):
            n = spec.samples_per_class + test_per_class
            feats = means[ci] + rng.normal(0.0, 1.0, size=(n, spec.feature_dim))
            feats = feats.astype(np.float32)
            for row in feats[: spec.samples_per_class]:
                train.append(
                    Sample(next_id, class_id, row, spec.sample_bytes)
                )
                next_id += 1
            for row in feats[spec.samples_per_class :]:
                probes.append(
                    Sample(next_id, class_id, row, spec.sample_bytes)
                )
                next_id += 1
        # interleave classes so any buffer prefix covers them all
        order = rng.permutation(len(train))
        tasks.append(Task.from_samples(t, [train[i] for i in order]))
        probe_sets[t] = probes

    return Stream(spec=spec, tasks=tasks, probe_sets=probe_sets)


# --- baseline strategies -------------------------------------------------


@dataclass(frozen=True)
class StaticConfPolicy:
    """One fixed conf for every task; no profiling."""

    conf: Conf

    def conf_for_task(self, task_index, n_tasks, task_size, budget, step) -> Conf:
        return self.conf


def default_static_conf(budget: int, task_size: int, step: int) -> Conf:
    """The conventional static split: half the budget to EM, the rest to SB
    capped by the task size (all new samples in memory when they fit)."""
    if budget < step:
        raise ValueError(f"budget {budget} cannot hold even one step of {step}")
    em = round_down_to_step(budget // 2, step)
    sb = min(round_up_to_step(task_size, step), budget - em)
    if sb < step:
        sb = step
        em = round_down_to_step(budget - sb, step)
    return Conf(sb_size=sb, em_size=em)


@dataclass(frozen=True)
class HeuristicPolicy:
    """Memory proportional to task counts: SB serves the 1 new task, EM the
    t-1 old ones, within ``fraction`` of the budget."""

    fraction: float = 1.0

    def conf_for_task(self, task_index, n_tasks, task_size, budget, step) -> Conf:
        total = round_down_to_step(int(self.fraction * budget), step)
        total = max(total, step)
        if task_index <= 1:
            return Conf(sb_size=total, em_size=0)
        # SB gets 1/t of the in-use memory, rounded half-up to the step grid
        sb_steps = math.floor(total / (task_index * step) + 0.5)
        sb = min(max(1, sb_steps) * step, total)
        return Conf(sb_size=sb, em_size=total - sb)


@dataclass(frozen=True)
class SchedulePolicy:
    """Explicit per-task confs (used by the half-way-frozen baseline)."""

    confs: tuple[Conf, ...]

    def conf_for_task(self, task_index, n_tasks, task_size, budget, step) -> Conf:
        return self.confs[task_index - 1]


@dataclass
class StaticExploration:
    """Full-run grid exploration backing the best-static baselines."""

    winner: Conf
    halfway_winner: Conf
    final_records: list[ProfileRecord]
    halfway_records: list[ProfileRecord]


def explore_static_confs(
    stream: Stream,
    config: RunConfig,
    cutline: float,
    mode: str = HIGHEST_UTILITY,
) -> StaticExploration:
    """Run every grid conf over the whole stream and rank the outcomes.

    The winner is picked with the same cutline-plus-metric rule the adaptive
    runtime uses, on (final accuracy, total joules). The halfway winner uses
    the standings after ceil(n/2) tasks. Exploration cost is not billed.
    """
    from .profiler import build_search_space

    max_task = max(len(t) for t in stream.tasks)
    space = build_search_space(config.budget_samples, max_task, config.step)
    half = math.ceil(len(stream.tasks) / 2)
    final_records: list[ProfileRecord] = []
    halfway_records: list[ProfileRecord] = []
    baseline = 1.0 / stream.spec.n_classes

    for conf in space:
        report = run_stream(
            stream.tasks, stream.probe_sets, config, StaticConfPolicy(conf)
        )
        final_records.append(
            ProfileRecord(
                conf=conf,
                accuracy_estimate=report.final_average_accuracy,
                energy_estimate=report.ledger.total,
                epoch_measured=config.epochs_per_task * len(stream.tasks),
            )
        )
        half_task_id = stream.tasks[half - 1].task_id
        half_row = report.accuracy_matrix[half_task_id]
        half_acc = float(np.mean(list(half_row.values())))
        half_joules = report.epoch_rows[half * config.epochs_per_task - 1].joules_cum
        halfway_records.append(
            ProfileRecord(
                conf=conf,
                accuracy_estimate=half_acc,
                energy_estimate=half_joules,
                epoch_measured=config.epochs_per_task * half,
            )
        )

    from .selector import select_record

    winner = select_record(final_records, cutline, mode, baseline).conf
    halfway_winner = select_record(halfway_records, cutline, mode, baseline).conf
    return StaticExploration(
        winner=winner,
        halfway_winner=halfway_winner,
        final_records=final_records,
        halfway_records=halfway_records,
    )


def best_static_policy(exploration: StaticExploration) -> StaticConfPolicy:
    return StaticConfPolicy(exploration.winner)


def best_history_policy(exploration: StaticExploration, n_tasks: int) -> SchedulePolicy:
    """Mirrors the best static conf through the first half of the stream,
    then freezes the halfway standings' winner for the remaining tasks."""
    half = math.ceil(n_tasks / 2)
    confs = tuple(
        exploration.winner if t <= half else exploration.halfway_winner
        for t in range(1, n_tasks + 1)
    )
    return SchedulePolicy(confs)


STRATEGY_NAMES = (
    "adaptive",
    "static",
    "heuristic",
    "heuristic-50",
    "heuristic-20",
    "best-static",
    "best-history",
)


def make_policy(
    strategy: str,
    stream: Stream,
    config: RunConfig,
    static_conf: Conf | None = None,
) -> ConfPolicy | None:
    """Resolve a strategy name into a policy (None means adaptive profiling)."""
    if strategy == "adaptive":
        return None
    if strategy == "static":
        conf = static_conf or default_static_conf(
            config.budget_samples, stream.spec.task_size, config.step
        )
        return StaticConfPolicy(conf)
    if strategy == "heuristic":
        return HeuristicPolicy(1.0)
    if strategy == "heuristic-50":
        return HeuristicPolicy(0.5)
    if strategy == "heuristic-20":
        return HeuristicPolicy(0.2)
    if strategy in ("best-static", "best-history"):
        exploration = explore_static_confs(stream, config, config.cutline, config.selection_mode)
        if strategy == "best-static":
            return best_static_policy(exploration)
        return best_history_policy(exploration, len(stream.tasks))
    raise ValueError(f"unknown strategy {strategy!r}; pick from {STRATEGY_NAMES}")


# --- report emission -------------------------------------------------------

TRACE_COLUMNS = ("task", "epoch", "loss", "swap_ratio", "io_state", "em_size", "sb_size", "joules_cum")
TRACE_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: RunReport, outdir: str | Path, label: str = "run") -> dict[str, Path]:
    """Write summary, per-epoch trace, decision log, and scatter files.

    Column order is fixed and versioned; reruns with the same seed produce
    byte-identical files.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    summary = {
        "label": label,
        "final_average_accuracy": report.final_average_accuracy,
        "energy_joules": report.ledger.as_dict(),
        "chosen_confs": [
            {"task": t, "sb": c.sb_size, "em": c.em_size} for t, c in report.chosen_confs
        ],
        "swap_totals": report.swap_totals,
        "n_classes": report.n_classes,
        "aborted": report.aborted,
        "trace_version": TRACE_VERSION,
    }
    summary_path = outdir / f"{label}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    trace_path = outdir / f"{label}_trace.csv"
    lines = [",".join(TRACE_COLUMNS)]
    for row in report.epoch_rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    row.task_id,
                    row.epoch,
                    row.loss,
                    row.swap_ratio,
                    row.io_state,
                    row.em_size,
                    row.sb_size,
                    row.joules_cum,
                )
            )
        )
    trace_path.write_text("\n".join(lines) + "\n")

    decisions = {
        "controller": [
            {
                "epoch": d.epoch,
                "state": d.state.value,
                "old_ratio": d.old_ratio,
                "new_ratio": d.new_ratio,
                "interval_epochs": d.interval_epochs,
                "percent_per_firing": d.percent_per_firing,
            }
            for d in report.controller_decisions
        ],
        "selections": [
            {
                "task": s.task_id,
                "mode": s.mode,
                "cutline": s.cutline,
                "sb": s.conf.sb_size,
                "em": s.conf.em_size,
                "utility": s.utility,
            }
            for s in report.selections
        ],
        "profiles": [
            {
                "task": t,
                "sb": r.conf.sb_size,
                "em": r.conf.em_size,
                "accuracy_estimate": r.accuracy_estimate,
                "energy_estimate": r.energy_estimate,
            }
            for t, r in report.profile_trace
        ],
        "budget_events": [
            {
                "task": e.task_id,
                "epoch": e.epoch,
                "old_budget": e.old_budget,
                "new_budget": e.new_budget,
                "action": e.action,
            }
            for e in report.budget_events
        ],
    }
    decisions_path = outdir / f"{label}_decisions.json"
    decisions_path.write_text(json.dumps(decisions, indent=2, sort_keys=True) + "\n")

    scatter_path = outdir / f"{label}_scatter.csv"
    scatter_path.write_text(
        "label,total_joules,final_average_accuracy\n"
        f"{label},{_fmt(report.ledger.total)},{_fmt(report.final_average_accuracy)}\n"
    )
    return {
        "summary": summary_path,
        "trace": trace_path,
        "decisions": decisions_path,
        "scatter": scatter_path,
    }


def run_utility(report: RunReport) -> float:
    """Cost-effectiveness of a whole run: accuracy gain over chance per joule."""
    gain = max(report.final_average_accuracy - 1.0 / report.n_classes, 0.0)
    return gain / report.ledger.total


@dataclass(frozen=True)
class SweepPoint:
    strategy: str
    budget: int
    seed: int
    accuracy: float
    joules: float
    utility: float


def sweep(
    spec: StreamSpec,
    base_config: RunConfig,
    strategies: Sequence[str],
    budgets: Sequence[int],
    seeds: Sequence[int],
) -> list[SweepPoint]:
    """Grid of (strategy, budget, seed) runs on a shared stream spec."""
    points: list[SweepPoint] = []
    for budget in budgets:
        for seed in seeds:
            stream = generate_stream(replace(spec, seed=spec.seed + seed))
            config = replace(base_config, budget_samples=budget, seed=seed)
            for strategy in strategies:
                policy = make_policy(strategy, stream, config)
                report = run_stream(stream.tasks, stream.probe_sets, config, policy)
                points.append(
                    SweepPoint(
                        strategy=strategy,
                        budget=budget,
                        seed=seed,
                        accuracy=report.final_average_accuracy,
                        joules=report.ledger.total,
                        utility=run_utility(report),
                    )
                )
    return points


def write_sweep(points: Sequence[SweepPoint], outdir: str | Path) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "sweep_scatter.csv"
    lines = ["strategy,budget,seed,final_average_accuracy,total_joules,utility"]
    for p in points:
        lines.append(
            f"{p.strategy},{p.budget},{p.seed},{_fmt(p.accuracy)},{_fmt(p.joules)},{_fmt(p.utility)}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path
