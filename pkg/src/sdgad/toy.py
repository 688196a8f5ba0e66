"""Small synthetic interaction stream with a stable community structure.

Nodes are paired into fixed partnerships.  Each pair interacts roughly
periodically (pair-specific period, small jitter), with a random direction per
event.  Injected structural anomalies then connect non-partners, and injected
temporal anomalies land at off-rhythm times.
"""

from __future__ import annotations

import numpy as np

from .events import EventStream


def toy_stream(num_events: int = 2000, num_nodes: int = 50, seed: int = 0,
               period: tuple[float, float] = (20.0, 30.0), jitter: float = 0.3,
               feature_dim: int = 0) -> EventStream:
    if num_nodes < 2 or num_nodes % 2:
        raise ValueError("num_nodes must be an even number >= 2")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_nodes)
    pairs = perm.reshape(-1, 2)
    n_pairs = len(pairs)
    periods = rng.uniform(*period, size=n_pairs)
    per_pair = int(np.ceil(num_events / n_pairs)) + 1

    src, dst, ts = [], [], []
    for (a, b), p in zip(pairs, periods):
        start = rng.uniform(0.0, p)
        times = start + p * np.arange(per_pair) + rng.normal(0.0, jitter, per_pair)
        flip = rng.random(per_pair) < 0.5
        src.append(np.where(flip, b, a))
        dst.append(np.where(flip, a, b))
        ts.append(times)
    src, dst, ts = (np.concatenate(c) for c in (src, dst, ts))
    order = np.argsort(ts, kind="stable")[:num_events]
    return EventStream.from_arrays(src[order], dst[order], ts[order], labels=np.zeros(num_events, dtype=np.int64),
                                   num_nodes=num_nodes, feature_dim=feature_dim)
