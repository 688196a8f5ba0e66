import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdgad.events import EventStream, chronological_split
from sdgad.injection import (
    InjectionError,
    InjectionPlan,
    apply_plan,
    inject_structural,
    inject_temporal,
    injection_count,
)
from sdgad.toy import toy_stream


def stream(n=1000, nodes=20, seed=0):
    rng = np.random.default_rng(seed)
    return EventStream.from_arrays(rng.integers(0, nodes, n), rng.integers(0, nodes, n),
                                   np.sort(rng.uniform(0, 100, n)), num_nodes=nodes)


@pytest.mark.parametrize("rate, size, expected", [(0.001, 10000, 10), (0.0005, 10000, 5), (0.001, 999, 0),
                                                  (0.01, 800, 8), (0.005, 800, 4), (0.3, 7, 2)])
def test_injection_count(rate, size, expected):
    assert injection_count(rate, size) == expected


@given(st.floats(0, 0.5), st.integers(0, 100000))
def test_injection_count_is_floor(rate, size):
    exact = rate * size
    got = injection_count(rate, size)
    assert got == math.floor(exact) or (got == math.floor(exact) + 1 and exact + 1e-9 >= got)


def test_temporal_anomalies_copy_pairs_with_new_times():
    s = stream()
    out = inject_temporal(s, 12, seed=3)
    t = out.kinds == "T"
    assert t.sum() == 12 and np.all(out.labels[t] == 1) and np.all(out.labels[~t] == 0)
    assert np.all(np.diff(out.ts) >= 0)
    assert np.all((out.ts[t] >= s.ts[0]) & (out.ts[t] <= s.ts[-1]))
    pairs = set(zip(s.src.tolist(), s.dst.tolist()))
    assert all((u, v) in pairs for u, v in zip(out.src[t], out.dst[t]))


def test_structural_anomalies_change_destination():
    s = stream()
    out = inject_structural(s, 30, seed=1)
    m = out.kinds == "S"
    assert m.sum() == 30
    assert np.all((out.dst[m] >= 0) & (out.dst[m] < s.num_nodes))


def test_structural_destination_differs_from_template():
    # one-pair stream: every template is (0 -> 1), so any new dst must avoid 1
    s = EventStream.from_arrays(np.zeros(50, int), np.ones(50, int), np.arange(50.0), num_nodes=5)
    out = inject_structural(s, 40, seed=0)
    assert np.all(out.dst[out.kinds == "S"] != 1)


def test_injection_errors():
    s = stream(10)
    with pytest.raises(InjectionError):
        inject_temporal(s, 11, seed=0)
    with pytest.raises(InjectionError):
        InjectionPlan(train_rate_T=1.5)


@pytest.mark.parametrize("n", [2000, 5000, 12345])
def test_plan_counts_and_placement(n):
    s = stream(n, nodes=40)
    tr, va, te = chronological_split(s)
    plan = InjectionPlan(0.002, 0.003, 0.004, 0.005, seed=7)
    tr2, va2, te2 = apply_plan(tr, va, te, plan)
    assert (tr2.kinds == "T").sum() == math.floor(0.002 * len(tr))
    assert (va2.kinds == "T").sum() == math.floor(0.003 * len(va))
    assert (te2.kinds == "T").sum() == math.floor(0.004 * len(te))
    assert (te2.kinds == "S").sum() == math.floor(0.005 * len(te))
    assert (tr2.kinds == "S").sum() == 0 and (va2.kinds == "S").sum() == 0
    for before, after in ((tr, tr2), (va, va2), (te, te2)):
        assert after.ts[0] >= before.ts[0] and after.ts[-1] <= before.ts[-1]


def test_plan_is_deterministic():
    s = toy_stream(num_events=600)
    parts = chronological_split(s)
    a = apply_plan(*parts, InjectionPlan(0.01, 0.01, 0.01, 0.01, seed=3))
    b = apply_plan(*parts, InjectionPlan(0.01, 0.01, 0.01, 0.01, seed=3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.ts, y.ts)
        np.testing.assert_array_equal(x.dst, y.dst)


def test_toy_stream_shape():
    s = toy_stream()
    assert len(s) == 2000 and s.num_nodes == 50
    assert np.all(s.labels == 0)
    pairs = {frozenset(p) for p in zip(s.src.tolist(), s.dst.tolist())}
    assert len(pairs) == 25
