import numpy as np
import pytest

from hiercl.domain import Sample, Task


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_sample(sid: int, label: int, dim: int = 4, size_bytes: int = 64) -> Sample:
    rng = np.random.default_rng(sid)
    return Sample(
        id=sid,
        class_label=label,
        features=rng.normal(size=dim).astype(np.float32),
        size_bytes=size_bytes,
    )


def make_task(task_id: int, classes, per_class: int, start_id: int = 0, dim: int = 4):
    samples = []
    sid = start_id
    for _ in range(per_class):
        for c in classes:
            samples.append(make_sample(sid, c, dim))
            sid += 1
    return Task.from_samples(task_id, samples)
