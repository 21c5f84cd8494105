"""Per-task orchestration: profile on task arrival, then train epochs with a
probe / estimate / adapt loop at every epoch boundary.

Boundary order within an epoch: completed swaps are applied first, the epoch
is charged to the ledger, the probe classifies I/O and polls the budget
channel, any estimate/adapt runs, and only then does the swap plan fire.
Firing after the stats roll keeps a swap batch and its completions in the
same accounting bucket, and firing draws on the post-completion EM view so
requests never target slots that were just replaced. Since every in-memory
sample is drawn once per epoch, that view is exactly the drawn set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .control import ControllerConfig, ControllerDecision, SwapController
from .domain import (
    Conf,
    EnergyLedger,
    IoState,
    MemoryBudget,
    ProfileRecord,
    Sample,
    Task,
    validate_stream,
)
from .learner import (
    CostModel,
    LearnerDiverged,
    LearnerState,
    charge_epoch,
    evaluate,
    init_learner,
    train_epoch,
)
from .memory import (
    EpisodicMemory,
    StorageArchive,
    StreamBuffer,
    buffer_stream,
    compose_epoch_batches,
    flush,
)
from .profiler import ProfilerConfig, build_search_space, profile_task
from .selector import DEFAULT_CUTLINE, HIGHEST_UTILITY, select_record, utility
from .swap import IoChannel, SwapEngine


class ConfPolicy(Protocol):
    """Static conf decision per task; used by the baseline strategies."""

    def conf_for_task(
        self, task_index: int, n_tasks: int, task_size: int, budget: int, step: int
    ) -> Conf: ...


@dataclass
class RunConfig:
    epochs_per_task: int = 20
    batch_size: int = 32
    learning_rate: float = 0.1
    hidden_width: int = 32
    step: int = 500
    budget_samples: int = 2500
    cutline: float = DEFAULT_CUTLINE
    selection_mode: str = HIGHEST_UTILITY
    profiler: ProfilerConfig = field(default_factory=ProfilerConfig)
    cost: CostModel = field(default_factory=CostModel)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    initial_swap_ratio: float = 1.0
    # pins the ratio and disables AIMD adaptation when set (0.0 = swapping off)
    fixed_swap_ratio: float | None = None
    io_bandwidth_bytes_per_s: float = 100e6
    external_io_load: tuple[tuple[float, float], ...] = ()
    completion_window_epochs: int = 5
    # (effective_global_epoch, new_budget_samples) records, the control channel
    budget_schedule: tuple[tuple[int, int], ...] = ()
    archive_capacity_samples: int | None = None
    seed: int = 0
    domain_incremental: bool = False
    validate: bool = True


@dataclass
class EpochRow:
    task_id: int
    epoch: int
    loss: float
    swap_ratio: float
    io_state: str
    em_size: int
    sb_size: int
    joules_cum: float


@dataclass(frozen=True)
class SelectionRecord:
    task_id: int
    mode: str
    cutline: float
    conf: Conf
    utility: float
    deferred_profiling_seen: bool


@dataclass(frozen=True)
class BudgetEvent:
    task_id: int
    epoch: int
    old_budget: int
    new_budget: int
    action: str  # "reselect", "kept", "deferred_profiling"
    conf: Conf | None = None


@dataclass
class RunReport:
    final_average_accuracy: float
    final_per_class: dict[int, float]
    accuracy_matrix: dict[int, dict[int, float]]
    ledger: EnergyLedger
    chosen_confs: list[tuple[int, Conf]]
    epoch_rows: list[EpochRow]
    controller_decisions: list[ControllerDecision]
    selections: list[SelectionRecord]
    profile_trace: list[tuple[int, ProfileRecord]]
    profiling_units: dict[int, dict[str, int]]
    phase_log: list[tuple]
    swap_totals: dict[str, int]
    budget_events: list[BudgetEvent]
    n_classes: int
    aborted: bool = False
    abort_reason: str | None = None


def _largest_grid_conf(budget: int, task_size: int, step: int) -> Conf:
    space = build_search_space(budget, task_size, step)
    return max(space, key=lambda c: (c.total, c.sb_size))


class Runtime:
    """Owns all mutable run state; single-threaded over simulated time."""

    def __init__(self, config: RunConfig, policy: ConfPolicy | None = None):
        self.config = config
        self.policy = policy
        root = np.random.SeedSequence(config.seed)
        learner_seed, batch_seed, swap_seed, em_seed, profile_seed = root.spawn(5)
        self._batch_rng = np.random.default_rng(batch_seed)
        self._swap_rng = np.random.default_rng(swap_seed)
        self._em_rng = np.random.default_rng(em_seed)
        self._profile_root = profile_seed
        self._learner_seed = learner_seed

        self.ledger = EnergyLedger()
        self.archive = StorageArchive(config.archive_capacity_samples)
        self.sb = StreamBuffer(0)
        self.em = EpisodicMemory(0)
        self.channel = IoChannel(
            config.io_bandwidth_bytes_per_s, config.external_io_load
        )
        self.engine = SwapEngine(self.channel, self.archive)
        self.controller = SwapController(
            ratio=(
                config.fixed_swap_ratio
                if config.fixed_swap_ratio is not None
                else config.initial_swap_ratio
            ),
            cfg=config.controller,
        )
        self.budget = MemoryBudget(config.budget_samples)
        self.state: LearnerState | None = None
        self.deferred_profiling = False
        self._schedule = sorted(config.budget_schedule)
        self._schedule_pos = 0
        self._global_epoch = 0
        self._empty_epochs = 0
        self._epochs_since_firing = 0
        self._records_this_task: list[ProfileRecord] = []
        self._baseline_accuracy = 0.0
        self._task_size = 0
        self._chosen: Conf | None = None
        self._last_io_state = IoState.STABLE

        # report accumulators
        self.epoch_rows: list[EpochRow] = []
        self.selections: list[SelectionRecord] = []
        self.profile_trace: list[tuple[int, ProfileRecord]] = []
        self.profiling_units: dict[int, dict[str, int]] = {}
        self.phase_log: list[tuple] = []
        self.budget_events: list[BudgetEvent] = []
        self.chosen_confs: list[tuple[int, Conf]] = []
        self.accuracy_matrix: dict[int, dict[int, float]] = {}

    # --- conf decision ---------------------------------------------------

    def on_new_task(self, task: Task, task_index: int, n_tasks: int,
                    probe_union: list[Sample], classes_seen: int) -> Conf:
        """Decide this task's conf: profile-and-select, or ask the policy."""
        cfg = self.config
        self._task_size = len(task)
        self._records_this_task = []
        self._baseline_accuracy = 1.0 / classes_seen if classes_seen else 0.0
        deferred_seen = self.deferred_profiling
        self.deferred_profiling = False

        if self.policy is not None:
            conf = self.policy.conf_for_task(
                task_index, n_tasks, len(task), self.budget.max_samples, cfg.step
            )
            if conf.total > self.budget.max_samples:
                raise ValueError(
                    f"policy conf {conf} exceeds budget {self.budget.max_samples}"
                )
            self.chosen_confs.append((task.task_id, conf))
            return conf

        em_pool = {
            c: list(self.archive.class_samples(c)) for c in self.archive.classes()
        }
        reference = self._chosen if self._chosen is not None else None
        outcome = profile_task(
            live_state=self.state,
            task_samples=task.samples,
            em_pool_by_class=em_pool,
            probe_samples=probe_union,
            budget_samples=self.budget.max_samples,
            step=cfg.step,
            reference_target=reference,
            cfg=cfg.profiler,
            cost=cfg.cost,
            full_epochs=cfg.epochs_per_task,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            rng=np.random.default_rng(self._profile_root.spawn(1)[0]),
            ledger=self.ledger,
        )
        self._records_this_task = outcome.records
        self.profile_trace.extend((task.task_id, r) for r in outcome.records)
        self.profiling_units[task.task_id] = {
            "space_size": outcome.space_size,
            "warmup_units": outcome.warmup_units,
            "evaluation_units": outcome.evaluation_units,
        }
        chosen = select_record(
            outcome.records, cfg.cutline, cfg.selection_mode, self._baseline_accuracy
        )
        self.selections.append(
            SelectionRecord(
                task_id=task.task_id,
                mode=cfg.selection_mode,
                cutline=cfg.cutline,
                conf=chosen.conf,
                utility=utility(chosen, self._baseline_accuracy),
                deferred_profiling_seen=deferred_seen,
            )
        )
        self.chosen_confs.append((task.task_id, chosen.conf))
        return chosen.conf

    # --- probe / estimate / adapt -----------------------------------------

    def _poll_budget(self) -> tuple[int, int] | None:
        changed = None
        while (
            self._schedule_pos < len(self._schedule)
            and self._schedule[self._schedule_pos][0] <= self._global_epoch
        ):
            _, new_budget = self._schedule[self._schedule_pos]
            self._schedule_pos += 1
            if new_budget != self.budget.max_samples:
                changed = (self.budget.max_samples, new_budget)
                self.budget.update(new_budget, self._global_epoch)
        return changed

    def probe(self, task: Task, epoch: int) -> list[tuple]:
        """Classify I/O and poll the budget channel; returns state changes."""
        rate = self.engine.completion_rate(self.config.completion_window_epochs)
        if self.engine.pending_count == 0:
            self._empty_epochs += 1
        else:
            self._empty_epochs = 0
        io_state = self.controller.classify(rate, self._empty_epochs)
        changes: list[tuple] = []
        adaptive = self.config.fixed_swap_ratio is None
        if adaptive and io_state is not IoState.STABLE:
            changes.append(("io", io_state))
        budget_change = self._poll_budget()
        if budget_change is not None:
            old, new = budget_change
            changes.append(("budget_shrunk" if new < old else "budget_grown", old, new))
        self._last_io_state = io_state
        self.phase_log.append(("probe", task.task_id, epoch, tuple(c[0] for c in changes)))
        return changes

    def estimate_and_adapt(self, task: Task, epoch: int, changes: list[tuple]) -> None:
        if not changes:
            raise ValueError("estimate requires at least one state change")
        for change in changes:
            kind = change[0]
            self.phase_log.append(("estimate", task.task_id, epoch, kind))
            if kind == "io":
                decision = self.controller.react(change[1], epoch)
                if decision is not None:
                    self._epochs_since_firing = 0
                    # the idleness evidence is spent by the increase
                    if change[1] is IoState.IDLE:
                        self._empty_epochs = 0
                self.phase_log.append(("adapt", task.task_id, epoch, "swap_plan"))
            elif kind == "budget_shrunk":
                self._adapt_budget_shrunk(task, epoch, change[1], change[2])
                self.phase_log.append(("adapt", task.task_id, epoch, "memory"))
            elif kind == "budget_grown":
                self.deferred_profiling = True
                self.budget_events.append(
                    BudgetEvent(task.task_id, epoch, change[1], change[2], "deferred_profiling")
                )
                self.phase_log.append(("adapt", task.task_id, epoch, "deferred"))

    def _adapt_budget_shrunk(self, task: Task, epoch: int, old: int, new: int) -> None:
        usage = self.sb.capacity + self.em.capacity
        if usage <= new:
            self.budget_events.append(BudgetEvent(task.task_id, epoch, old, new, "kept"))
            return
        feasible = [r for r in self._records_this_task if r.conf.total <= new]
        if feasible:
            conf = select_record(
                feasible,
                self.config.cutline,
                self.config.selection_mode,
                self._baseline_accuracy,
            ).conf
        else:
            conf = _largest_grid_conf(new, self._task_size, self.config.step)
            warnings.warn(
                f"no profiled conf fits budget {new}; falling back to grid conf {conf}"
            )
        self._apply_conf(conf)
        self.budget_events.append(
            BudgetEvent(task.task_id, epoch, old, new, "reselect", conf)
        )
        self.chosen_confs.append((task.task_id, conf))

    def _apply_conf(self, conf: Conf) -> None:
        self._chosen = conf
        self.sb.resize(conf.sb_size)
        self.em.resize(conf.em_size, self.archive, self._em_rng)

    # --- the run loop -----------------------------------------------------

    def run(
        self,
        tasks: Sequence[Task],
        probe_sets: dict[int, list[Sample]],
        n_tasks: int | None = None,
    ) -> RunReport:
        cfg = self.config
        if cfg.validate:
            report = validate_stream(tasks, cfg.domain_incremental)
            if not report.ok:
                raise ValueError(f"invalid stream: {report.issues[:3]}")
        n_tasks = n_tasks or len(tasks)
        dim = len(tasks[0].samples[0].features)
        self.state = init_learner(dim, cfg.hidden_width, self._learner_seed)

        probe_union: list[Sample] = []
        classes_seen: set[int] = set()
        aborted = False
        abort_reason = None

        for task_index, task in enumerate(tasks, start=1):
            probe_union = probe_union + list(probe_sets.get(task.task_id, ()))
            classes_seen |= task.class_set

            try:
                conf = self.on_new_task(
                    task, task_index, n_tasks, probe_union, len(classes_seen)
                )
                self._apply_conf(conf)
                buffer_stream(task, self.sb, self.archive)
                self.engine.reset_history()
                self._empty_epochs = 0
                self._epochs_since_firing = 0
                self._train_task(task)
            except LearnerDiverged as exc:
                aborted = True
                abort_reason = str(exc)

            self.engine.drop_pending(self.ledger.wall_time_seconds)
            flush(task, self.sb, self.em, self.archive, self._em_rng)

            row = {}
            if self.state.class_order:
                for seen in tasks[:task_index]:
                    probes = probe_sets.get(seen.task_id, ())
                    if probes and (seen.class_set & self.state.classes_seen):
                        row[seen.task_id] = evaluate(
                            self.state, probes, classes=seen.class_set
                        ).average
            self.accuracy_matrix[task.task_id] = row
            if aborted:
                break

        if self.state.class_order:
            final = evaluate(self.state, probe_union)
        else:
            from .learner import EvalResult

            final = EvalResult(per_class={}, average=0.0)
        return RunReport(
            final_average_accuracy=final.average,
            final_per_class=final.per_class,
            accuracy_matrix=self.accuracy_matrix,
            ledger=self.ledger,
            chosen_confs=self.chosen_confs,
            epoch_rows=self.epoch_rows,
            controller_decisions=self.controller.decisions,
            selections=self.selections,
            profile_trace=self.profile_trace,
            profiling_units=self.profiling_units,
            phase_log=self.phase_log,
            swap_totals={
                "issued": self.engine.issued_total,
                "applied": self.engine.applied_total,
                "dropped": self.engine.dropped_total,
                "pending": self.engine.pending_count,
            },
            budget_events=self.budget_events,
            n_classes=len(classes_seen),
            aborted=aborted,
            abort_reason=abort_reason,
        )

    def _train_task(self, task: Task) -> None:
        cfg = self.config
        for epoch in range(1, cfg.epochs_per_task + 1):
            self._global_epoch += 1
            batches, _ = compose_epoch_batches(
                self.sb, self.em, cfg.batch_size, self._batch_rng
            )
            n_inuse = len(self.sb) + self.em.total
            self.state, loss = train_epoch(self.state, batches, cfg.learning_rate)

            t0 = self.ledger.wall_time_seconds
            t1 = t0 + cfg.cost.epoch_seconds(n_inuse)
            self.engine.apply_completions(self.em, t1, self._swap_rng)
            io_busy = self.channel.busy_seconds(t0, t1)
            charge_epoch(cfg.cost, n_inuse, io_busy, self.ledger)
            self.engine.end_epoch()

            changes = self.probe(task, epoch)
            if changes:
                self.estimate_and_adapt(task, epoch, changes)

            if self.sb.capacity + self.em.capacity > self.budget.max_samples:
                raise RuntimeError("memory invariant violated: conf exceeds budget")

            plan = self.controller.plan
            if plan.enabled and self.em.total > 0:
                self._epochs_since_firing += 1
                if self._epochs_since_firing >= plan.interval_epochs:
                    self.engine.issue(
                        self.em.contents(), plan.percent_per_firing, t1, self._swap_rng
                    )
                    self._epochs_since_firing = 0

            self.epoch_rows.append(
                EpochRow(
                    task_id=task.task_id,
                    epoch=epoch,
                    loss=loss,
                    swap_ratio=self.controller.ratio,
                    io_state=self._last_io_state.value,
                    em_size=self.em.capacity,
                    sb_size=self.sb.capacity,
                    joules_cum=self.ledger.total,
                )
            )


def run_stream(
    tasks: Sequence[Task],
    probe_sets: dict[int, list[Sample]],
    config: RunConfig,
    policy: ConfPolicy | None = None,
) -> RunReport:
    """Run a full task stream and return the report (library entry point)."""
    return Runtime(config, policy).run(tasks, probe_sets)
