"""Shared domain types: samples, tasks, memory configurations, swap plans,
I/O states, profiling records, and the energy ledger.

Everything here is an immutable value safe to share between modules; all
mutation happens inside the owning module (buffers, engine, runtime).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

# Sizing granularity for SB/EM capacities, in samples.
DEFAULT_STEP = 500

# Knee of the ratio/interval mapping: at or above this ratio the whole drawn
# set is swapped every `interval` epochs; below it the interval is pinned at
# MAX_INTERVAL and only the per-firing percentage shrinks.
RATIO_KNEE = 0.20
MAX_INTERVAL_EPOCHS = 5


@dataclass(frozen=True, eq=False)
class Sample:
    """One labeled example; the unit moved between buffers and storage.

    ``features`` is an opaque fixed-length vector: the runtime only moves
    payloads, it never inspects them. ``size_bytes`` is the logical transfer
    size used by the I/O model and is uniform across a stream.
    """

    id: int
    class_label: int
    features: np.ndarray
    size_bytes: int

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"size_bytes must be positive, got {self.size_bytes}")
        if np.ndim(self.features) != 1:
            raise ValueError("features must be a 1-D vector")


@dataclass(frozen=True)
class Task:
    """An ordered chunk of the input stream sharing one set of classes."""

    task_id: int
    samples: tuple[Sample, ...]
    class_set: frozenset[int]

    def __post_init__(self):
        if self.task_id < 1:
            raise ValueError("task_id is an ordinal starting at 1")
        for s in self.samples:
            if s.class_label not in self.class_set:
                raise ValueError(
                    f"sample {s.id} has label {s.class_label} outside class_set"
                )

    @classmethod
    def from_samples(cls, task_id: int, samples: Sequence[Sample]) -> "Task":
        return cls(
            task_id=task_id,
            samples=tuple(samples),
            class_set=frozenset(s.class_label for s in samples),
        )

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True, order=True)
class Conf:
    """A candidate memory allocation: (stream-buffer size, episodic-memory size)."""

    sb_size: int
    em_size: int

    def __post_init__(self):
        if self.sb_size < 0 or self.em_size < 0:
            raise ValueError("sizes must be non-negative")
        if self.sb_size + self.em_size < 1:
            raise ValueError("a conf must hold at least one sample")

    @property
    def total(self) -> int:
        return self.sb_size + self.em_size

    def on_grid(self, step: int) -> bool:
        return self.sb_size % step == 0 and self.em_size % step == 0


@dataclass
class MemoryBudget:
    """User-specified cap on SB + EM, adjustable while a run is live."""

    max_samples: int
    epoch_of_last_change: int = 0

    def update(self, new_max: int, epoch: int) -> None:
        self.max_samples = new_max
        self.epoch_of_last_change = epoch


class IoState(Enum):
    CONGESTED = "congested"
    IDLE = "idle"
    STABLE = "stable"


@dataclass(frozen=True)
class SwapPlan:
    """A swap ratio decomposed into a firing interval and per-firing percentage.

    ``ratio`` is the average fraction of drawn EM samples replaced per epoch
    and always equals ``percent_per_firing / interval_epochs``. To keep that
    identity exact in floating point, instances must be built through
    :meth:`from_parts` or ``control.plan_from_ratio``, which canonicalize
    ``percent_per_firing = ratio * interval_epochs`` bitwise.
    """

    ratio: float
    interval_epochs: int
    percent_per_firing: float

    def __post_init__(self):
        if not (0.0 <= self.ratio <= 1.0):
            raise ValueError(f"ratio out of range: {self.ratio}")
        if not (1 <= self.interval_epochs <= MAX_INTERVAL_EPOCHS):
            raise ValueError(f"interval out of range: {self.interval_epochs}")
        if self.ratio == 0.0:
            if self.percent_per_firing != 0.0:
                raise ValueError("zero-ratio plan must not fire")
            return
        if not (0.0 < self.percent_per_firing <= 1.0):
            raise ValueError(f"percent out of range: {self.percent_per_firing}")
        if self.percent_per_firing != self.ratio * self.interval_epochs:
            raise ValueError("percent_per_firing must equal ratio * interval_epochs")
        if self.ratio >= RATIO_KNEE and self.percent_per_firing != 1.0:
            raise ValueError("at or above the knee the full drawn set is swapped")
        if self.ratio < RATIO_KNEE and self.interval_epochs != MAX_INTERVAL_EPOCHS:
            raise ValueError("below the knee the interval is pinned at the maximum")

    @classmethod
    def from_parts(cls, interval_epochs: int, percent_per_firing: float) -> "SwapPlan":
        """Build a canonical plan from (interval, percent)."""
        if percent_per_firing == 0.0:
            return cls.disabled()
        ratio = percent_per_firing / interval_epochs
        return cls(
            ratio=ratio,
            interval_epochs=interval_epochs,
            percent_per_firing=ratio * interval_epochs,
        )

    @classmethod
    def disabled(cls) -> "SwapPlan":
        """A plan that never fires (swapping off)."""
        return cls(ratio=0.0, interval_epochs=MAX_INTERVAL_EPOCHS, percent_per_firing=0.0)

    @property
    def enabled(self) -> bool:
        return self.ratio > 0.0


@dataclass(frozen=True)
class ProfileRecord:
    """Estimated accuracy and energy for one conf, measured at a short horizon."""

    conf: Conf
    accuracy_estimate: float
    energy_estimate: float
    epoch_measured: int

    def __post_init__(self):
        if not (0.0 <= self.accuracy_estimate <= 1.0):
            raise ValueError(f"accuracy out of range: {self.accuracy_estimate}")
        if self.energy_estimate <= 0.0:
            raise ValueError("energy_estimate must be positive")


LEDGER_COMPONENTS = ("gpu_dynamic", "static", "io", "ram", "profiling")


@dataclass
class EnergyLedger:
    """Per-component joule accounting; entries only ever grow.

    ``profiling`` collects the overhead of conf profiling so it can be
    reported separately from the main training charge.
    """

    gpu_dynamic: float = 0.0
    static: float = 0.0
    io: float = 0.0
    ram: float = 0.0
    profiling: float = 0.0
    wall_time_seconds: float = 0.0

    def add(self, component: str, joules: float) -> None:
        if component not in LEDGER_COMPONENTS:
            raise KeyError(f"unknown ledger component: {component}")
        if joules < 0.0:
            raise ValueError("ledger entries are monotone; negative charge rejected")
        setattr(self, component, getattr(self, component) + joules)

    def advance_time(self, seconds: float) -> None:
        if seconds < 0.0:
            raise ValueError("time moves forward")
        self.wall_time_seconds += seconds

    @property
    def total(self) -> float:
        return sum(getattr(self, c) for c in LEDGER_COMPONENTS)

    def as_dict(self) -> dict[str, float]:
        d = {c: getattr(self, c) for c in LEDGER_COMPONENTS}
        d["total"] = self.total
        d["wall_time_seconds"] = self.wall_time_seconds
        return d


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    task_id: int
    detail: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, task_id: int, detail: str) -> None:
        self.issues.append(ValidationIssue(kind, task_id, detail))


def validate_stream(
    tasks: Sequence[Task], domain_incremental: bool = False
) -> ValidationReport:
    """Check a task stream for structural defects before running it.

    Flags empty tasks, class overlap between tasks (unless the stream is
    declared domain-incremental), feature-dimension mismatches, and
    non-uniform sample byte sizes.
    """
    if not tasks:
        raise ValueError("stream must contain at least one task")

    report = ValidationReport()
    dim: int | None = None
    size_bytes: int | None = None
    seen_classes: dict[int, int] = {}

    for task in tasks:
        if len(task.samples) == 0:
            report.add("empty_task", task.task_id, "task has zero samples")
            continue
        for s in task.samples:
            if dim is None:
                dim = len(s.features)
            elif len(s.features) != dim:
                report.add(
                    "dim_mismatch",
                    task.task_id,
                    f"sample {s.id} has dim {len(s.features)}, stream dim {dim}",
                )
            if size_bytes is None:
                size_bytes = s.size_bytes
            elif s.size_bytes != size_bytes:
                report.add(
                    "size_bytes_mismatch",
                    task.task_id,
                    f"sample {s.id} has {s.size_bytes} bytes, stream uses {size_bytes}",
                )
        if not domain_incremental:
            for c in sorted(task.class_set):
                if c in seen_classes:
                    report.add(
                        "class_overlap",
                        task.task_id,
                        f"class {c} already appeared in task {seen_classes[c]}",
                    )
        for c in task.class_set:
            seen_classes.setdefault(c, task.task_id)

    return report


def round_up_to_step(n: int, step: int) -> int:
    return int(math.ceil(n / step)) * step


def round_down_to_step(n: int, step: int) -> int:
    return (n // step) * step
