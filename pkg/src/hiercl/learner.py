"""Pluggable trainer interface with a reference implementation.

The reference learner is a one-hidden-layer tanh network with a softmax
head, trained by mini-batch gradient descent in float64. It is deliberately
small: cheap enough to verify against finite differences, expressive enough
to exhibit catastrophic forgetting on disjoint-class streams.

Any object honoring train_epoch / evaluate / checkpoint semantics can be
substituted; the runtime only moves samples and charges costs.

The cost model converts training work into ledger joules: time is
samples-processed times seconds-per-sample, energy is power times time per
component. Power defaults are sized like a small edge board with a roughly
10 W budget where the GPU dominates dynamic draw and swap I/O sits around
0.1 W.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import EnergyLedger, Sample


class LearnerDiverged(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class LearnerState:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray  # one column per seen class, in class_order
    b2: np.ndarray
    class_order: list[int]
    rng: np.random.Generator

    @property
    def classes_seen(self) -> frozenset[int]:
        return frozenset(self.class_order)

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[1]


@dataclass(frozen=True)
class Checkpoint:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    class_order: tuple[int, ...]
    rng_state: dict


def init_learner(feature_dim: int, hidden_width: int = 32, seed: int | np.random.SeedSequence = 0) -> LearnerState:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(feature_dim)
    return LearnerState(
        w1=rng.normal(0.0, scale, size=(feature_dim, hidden_width)),
        b1=np.zeros(hidden_width),
        w2=np.zeros((hidden_width, 0)),
        b2=np.zeros(0),
        class_order=[],
        rng=rng,
    )


def ensure_classes(state: LearnerState, labels: Iterable[int]) -> None:
    """Grow the prediction head to cover newly seen classes (sorted order)."""
    new = sorted(set(labels) - set(state.class_order))
    if not new:
        return
    h = state.hidden_width
    scale = 1.0 / np.sqrt(h)
    cols = state.rng.normal(0.0, scale, size=(h, len(new)))
    state.w2 = np.concatenate([state.w2, cols], axis=1)
    state.b2 = np.concatenate([state.b2, np.zeros(len(new))])
    state.class_order.extend(new)


def _forward(state: LearnerState, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(x @ state.w1 + state.b1)
    logits = hidden @ state.w2 + state.b2
    return hidden, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(
    state: LearnerState, x: np.ndarray, y_idx: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over a batch plus gradients for all parameters.

    ``y_idx`` indexes columns of the head (positions in class_order).
    """
    n = x.shape[0]
    hidden, logits = _forward(state, x)
    probs = _softmax(logits)
    # an underflowed true-class probability is a real divergence signal, so
    # the log is left unclamped and the caller halts on non-finite loss
    with np.errstate(divide="ignore"):
        loss = float(-np.mean(np.log(probs[np.arange(n), y_idx])))
    dlogits = probs
    dlogits[np.arange(n), y_idx] -= 1.0
    dlogits /= n
    dw2 = hidden.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ state.w2.T
    dz1 = dhidden * (1.0 - hidden**2)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def batch_arrays(
    state: LearnerState,
    batch: Sequence[Sample],
    index: dict[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.features for s in batch]).astype(np.float64)
    if index is None:
        index = {c: i for i, c in enumerate(state.class_order)}
    y = np.array([index[s.class_label] for s in batch], dtype=np.intp)
    return x, y


def train_epoch(
    state: LearnerState,
    batches: Sequence[Sequence[Sample]],
    learning_rate: float,
) -> tuple[LearnerState, float]:
    """One gradient pass over all batches; returns the sample-weighted mean loss."""
    if not batches:
        raise ValueError("train_epoch needs at least one batch")
    for batch in batches:
        ensure_classes(state, (s.class_label for s in batch))
    index = {c: i for i, c in enumerate(state.class_order)}
    total = 0.0
    count = 0
    for batch in batches:
        x, y = batch_arrays(state, batch, index)
        loss, grads = loss_and_grads(state, x, y)
        if not np.isfinite(loss):
            raise LearnerDiverged(f"non-finite loss {loss}")
        state.w1 -= learning_rate * grads["w1"]
        state.b1 -= learning_rate * grads["b1"]
        state.w2 -= learning_rate * grads["w2"]
        state.b2 -= learning_rate * grads["b2"]
        total += loss * len(batch)
        count += len(batch)
    return state, total / count


@dataclass(frozen=True)
class EvalResult:
    per_class: dict[int, float]
    average: float


def evaluate(
    state: LearnerState,
    test_samples: Sequence[Sample],
    classes: Iterable[int] | None = None,
) -> EvalResult:
    """Per-class accuracies and their macro average over seen classes.

    ``classes`` restricts the average to a subset (e.g. one task's classes);
    by default every seen class is expected, and seen classes with no test
    samples are excluded with a warning rather than dragging the average to
    zero. Prediction always runs over the full seen-class head.
    """
    if not state.class_order:
        raise ValueError("learner has not seen any classes")
    expected = state.classes_seen if classes is None else frozenset(classes)
    by_class: dict[int, list[Sample]] = {}
    for s in test_samples:
        if s.class_label in state.classes_seen and s.class_label in expected:
            by_class.setdefault(s.class_label, []).append(s)
    missing = sorted(expected & state.classes_seen - set(by_class))
    if missing:
        warnings.warn(f"no test samples for classes {missing}; excluded from average")
    per_class: dict[int, float] = {}
    for c in sorted(by_class):
        x, _ = batch_arrays(state, by_class[c])
        _, logits = _forward(state, x)
        pred_cols = logits.argmax(axis=1)
        preds = np.array([state.class_order[i] for i in pred_cols])
        per_class[c] = float(np.mean(preds == c))
    if not per_class:
        raise ValueError("test set covers none of the seen classes")
    return EvalResult(per_class=per_class, average=float(np.mean(list(per_class.values()))))


def checkpoint(state: LearnerState) -> Checkpoint:
    return Checkpoint(
        w1=state.w1.copy(),
        b1=state.b1.copy(),
        w2=state.w2.copy(),
        b2=state.b2.copy(),
        class_order=tuple(state.class_order),
        rng_state=copy.deepcopy(state.rng.bit_generator.state),
    )


def restore(cp: Checkpoint) -> LearnerState:
    rng = np.random.default_rng()
    rng.bit_generator.state = copy.deepcopy(cp.rng_state)
    return LearnerState(
        w1=cp.w1.copy(),
        b1=cp.b1.copy(),
        w2=cp.w2.copy(),
        b2=cp.b2.copy(),
        class_order=list(cp.class_order),
        rng=rng,
    )


def params_equal(a: LearnerState, b: LearnerState) -> bool:
    return (
        a.class_order == b.class_order
        and a.w1.tobytes() == b.w1.tobytes()
        and a.b1.tobytes() == b.b1.tobytes()
        and a.w2.tobytes() == b.w2.tobytes()
        and a.b2.tobytes() == b.b2.tobytes()
    )


def state_digest(state: LearnerState) -> str:
    import hashlib

    h = hashlib.sha256()
    for arr in (state.w1, state.b1, state.w2, state.b2):
        h.update(arr.tobytes())
    h.update(repr(state.class_order).encode())
    return h.hexdigest()


# --- cost model ---------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    seconds_per_sample_step: float = 1e-4
    gpu_dynamic_watts: float = 7.0
    static_watts: float = 2.5
    io_active_watts: float = 0.1
    ram_watts_per_1k_samples: float = 0.05

    def __post_init__(self):
        for name in (
            "seconds_per_sample_step",
            "gpu_dynamic_watts",
            "static_watts",
            "io_active_watts",
            "ram_watts_per_1k_samples",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.seconds_per_sample_step == 0:
            raise ValueError("seconds_per_sample_step must be positive")
        # the GPU must dominate dynamic power for the decoupled-swap argument
        if self.gpu_dynamic_watts < self.io_active_watts:
            raise ValueError("gpu_dynamic_watts must be the largest dynamic term")

    def epoch_seconds(self, n_samples: int) -> float:
        return n_samples * self.seconds_per_sample_step

    def ram_watts(self, n_samples: int) -> float:
        return self.ram_watts_per_1k_samples * (n_samples / 1000.0)

    def train_joules(self, n_samples: int, epochs: int = 1) -> float:
        """Compute-side energy (GPU + static + RAM) for whole epochs."""
        t = self.epoch_seconds(n_samples) * epochs
        return (self.gpu_dynamic_watts + self.static_watts + self.ram_watts(n_samples)) * t


def charge_epoch(
    cost: CostModel,
    n_samples: int,
    swap_active_seconds: float,
    ledger: EnergyLedger,
) -> float:
    """Bill one training epoch to the ledger and advance wall time.

    Returns the epoch duration in simulated seconds. The I/O component is
    charged only for the seconds the channel was actually busy.
    """
    t = cost.epoch_seconds(n_samples)
    ledger.add("gpu_dynamic", cost.gpu_dynamic_watts * t)
    ledger.add("static", cost.static_watts * t)
    ledger.add("io", cost.io_active_watts * swap_active_seconds)
    ledger.add("ram", cost.ram_watts(n_samples) * t)
    ledger.advance_time(t)
    return t


def charge_profiling(cost: CostModel, n_samples: int, epochs: int, ledger: EnergyLedger) -> float:
    """Bill profiling work to the overhead component; returns elapsed seconds."""
    t = cost.epoch_seconds(n_samples) * epochs
    joules = (cost.gpu_dynamic_watts + cost.static_watts + cost.ram_watts(n_samples)) * t
    ledger.add("profiling", joules)
    ledger.advance_time(t)
    return t
