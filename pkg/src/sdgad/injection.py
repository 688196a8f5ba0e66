"""Synthetic temporal (T) and structural (S) anomaly injection.

Injected anomalies are copies of existing events added to a split:
a T anomaly keeps (src, dst, features) and gets a uniform random timestamp in
the split's time range; an S anomaly keeps (src, ts, features) and gets a
uniform random destination different from the original one.  Training and
validation only receive T anomalies, so S is an unseen type at test time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import STRUCTURAL, TEMPORAL, EventStream


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionPlan:
    train_rate_T: float = 0.001
    val_rate_T: float = 0.001
    test_rate_T: float = 0.0005
    test_rate_S: float = 0.0005
    seed: int = 0

    def __post_init__(self):
        for name in ("train_rate_T", "val_rate_T", "test_rate_T", "test_rate_S"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise InjectionError(f"{name} must lie in [0, 1), got {rate}")


def injection_count(rate: float, size: int) -> int:
    # the small epsilon absorbs float error in products like 0.001 * 10000
    return math.floor(rate * size + 1e-9)


def _benign_labels(split: EventStream) -> np.ndarray:
    return np.where(split.labels < 0, 0, split.labels)


def _templates(split: EventStream, count: int, rng) -> np.ndarray:
    # copy only original events, never earlier injections
    pool = np.flatnonzero(split.kinds == "")
    if count > len(pool):
        raise InjectionError(f"cannot inject {count} anomalies into a split of {len(pool)} original events")
    return pool[rng.integers(0, len(pool), size=count)]


def _append(split: EventStream, src, dst, ts, feats, kind: str) -> EventStream:
    k = len(ts)
    return EventStream.from_arrays(
        np.concatenate([split.src, src]), np.concatenate([split.dst, dst]),
        np.concatenate([split.ts, ts]), np.concatenate([split.features, feats]),
        np.concatenate([_benign_labels(split), np.ones(k, dtype=np.int64)]),
        np.concatenate([split.kinds, np.array([kind] * k, dtype=object)]),
        num_nodes=split.num_nodes, node_ids=split.node_ids,
    )


def inject_temporal(split: EventStream, count: int, seed) -> EventStream:
    """Add ``count`` copies of random events with re-drawn timestamps (label 1, kind T)."""
    if count < 0:
        raise InjectionError("count must be nonnegative")
    if count > len(split):
        raise InjectionError(f"cannot inject {count} anomalies into a split of {len(split)} events")
    if count == 0:
        return split
    rng = np.random.default_rng(seed)
    templates = _templates(split, count, rng)
    ts = rng.uniform(split.ts[0], split.ts[-1], size=count)
    return _append(split, split.src[templates], split.dst[templates], ts,
                   split.features[templates], TEMPORAL)


def inject_structural(split: EventStream, count: int, seed) -> EventStream:
    """Add ``count`` copies of random events with a re-drawn destination (label 1, kind S)."""
    if count < 0:
        raise InjectionError("count must be nonnegative")
    if count > len(split):
        raise InjectionError(f"cannot inject {count} anomalies into a split of {len(split)} events")
    if count == 0:
        return split
    if split.num_nodes < 2:
        raise InjectionError("structural anomalies need at least two nodes")
    rng = np.random.default_rng(seed)
    templates = _templates(split, count, rng)
    orig = split.dst[templates]
    # uniform over the other num_nodes - 1 nodes
    draw = rng.integers(0, split.num_nodes - 1, size=count)
    dst = np.where(draw >= orig, draw + 1, draw)
    return _append(split, split.src[templates], dst, split.ts[templates],
                   split.features[templates], STRUCTURAL)


def apply_plan(train: EventStream, val: EventStream, test: EventStream, plan: InjectionPlan):
    """T anomalies into every split at its rate, S anomalies into test only."""
    seeds = np.random.SeedSequence(plan.seed).spawn(4)
    train2 = inject_temporal(train, injection_count(plan.train_rate_T, len(train)), seeds[0])
    val2 = inject_temporal(val, injection_count(plan.val_rate_T, len(val)), seeds[1])
    n_test = len(test)
    test2 = inject_temporal(test, injection_count(plan.test_rate_T, n_test), seeds[2])
    test2 = inject_structural(test2, injection_count(plan.test_rate_S, n_test), seeds[3])
    return train2, val2, test2
