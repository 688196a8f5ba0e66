"""Event streams: ingestion, chronological splits and temporal history lookup.

A stream is stored column-wise (numpy arrays) and kept sorted by
(timestamp, event_id), with event_id equal to the position in the stream.
History queries treat a node's interactions in either role: for an event
(u -> v) the neighbor reported to u is v and the neighbor reported to v is u.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TEMPORAL = "T"
STRUCTURAL = "S"


class StreamFormatError(ValueError):
    """Raised for unreadable or malformed stream files."""


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    event_id: int
    src: int
    dst: int
    timestamp: float
    edge_features: np.ndarray
    label: int | None = None
    injected_kind: str | None = None


@dataclass
class EventStream:
    """Column store of events sorted by (timestamp, event_id).

    ``labels`` uses -1 for "no label".  ``kinds`` holds "" for original events
    and "T"/"S" for injected ones.
    """

    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    kinds: np.ndarray
    num_nodes: int
    node_ids: list = field(default_factory=list)
    _index: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.ts)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.ts = np.asarray(self.ts, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.kinds = np.asarray(self.kinds, dtype=object) if n else np.zeros(0, dtype=object)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(n, -1)
        if n and np.any(np.diff(self.ts) < 0):
            raise StreamFormatError("timestamps must be nondecreasing")
        if not (len(self.src) == len(self.dst) == len(self.labels) == len(self.kinds) == n):
            raise StreamFormatError("column lengths differ")
        if not self.node_ids:
            self.node_ids = list(range(self.num_nodes))

    # construction -----------------------------------------------------------

    @classmethod
    def from_arrays(cls, src, dst, ts, features=None, labels=None, kinds=None,
                    num_nodes: int | None = None, feature_dim: int = 0, node_ids=None) -> "EventStream":
        """Build a stream from unsorted columns; stable sort by timestamp."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.float64)
        n = len(ts)
        if features is None or np.size(features) == 0:
            width = feature_dim if features is None else np.asarray(features).reshape(n, -1).shape[1]
            features = np.zeros((n, max(width, feature_dim)))
        labels = np.full(n, -1) if labels is None else np.asarray(labels, dtype=np.int64)
        kinds = np.array([""] * n, dtype=object) if kinds is None else np.asarray(kinds, dtype=object)
        order = np.argsort(ts, kind="stable")
        if num_nodes is None:
            num_nodes = int(max(src.max(), dst.max()) + 1) if n else 0
        return cls(src[order], dst[order], ts[order], np.asarray(features, dtype=np.float64).reshape(n, -1)[order],
                   labels[order], kinds[order], num_nodes, list(node_ids or []))

    # basic access -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def event(self, i: int) -> Event:
        label = int(self.labels[i])
        return Event(i, int(self.src[i]), int(self.dst[i]), float(self.ts[i]), self.features[i],
                     None if label < 0 else label, self.kinds[i] or None)

    def __iter__(self):
        return (self.event(i) for i in range(len(self)))

    def subset(self, start: int, stop: int) -> "EventStream":
        sl = slice(start, stop)
        return EventStream(self.src[sl].copy(), self.dst[sl].copy(), self.ts[sl].copy(),
                           self.features[sl].copy(), self.labels[sl].copy(), self.kinds[sl].copy(),
                           self.num_nodes, list(self.node_ids))

    def with_labels(self, labels) -> "EventStream":
        return EventStream(self.src, self.dst, self.ts, self.features, np.asarray(labels, dtype=np.int64),
                           self.kinds, self.num_nodes, list(self.node_ids))

    @property
    def anomaly_ratio(self) -> float:
        labeled = self.labels >= 0
        return float(np.mean(self.labels[labeled] == 1)) if labeled.any() else 0.0

    # history ----------------------------------------------------------------

    def _node_index(self) -> dict:
        # node -> ascending event positions touching that node
        if self._index is None:
            index: dict[int, list[int]] = {}
            for i, (u, v) in enumerate(zip(self.src.tolist(), self.dst.tolist())):
                index.setdefault(u, []).append(i)
                if v != u:
                    index.setdefault(v, []).append(i)
            self._index = index
        return self._index

    def history_positions(self, node: int, t: float, before_event: int, L: int) -> list[int]:
        """Positions of the latest <= L events touching ``node`` that precede (t, before_event)."""
        if L < 1:
            raise ValueError("history length L must be >= 1")
        positions = self._node_index().get(node, [])
        keys = [(self.ts[p], p) for p in positions]
        cut = bisect.bisect_left(keys, (t, before_event))
        return positions[max(0, cut - L):cut]


def align_nodes(stream: EventStream, node_ids) -> EventStream:
    """Re-index ``stream`` so node k means ``node_ids[k]`` (ids compared as strings)."""
    target = {str(v): k for k, v in enumerate(node_ids)}
    try:
        lookup = np.array([target[str(v)] for v in stream.node_ids], dtype=np.int64)
    except KeyError as exc:
        raise StreamFormatError(f"node {exc.args[0]!r} is not in the reference node map") from None
    if len(stream) and max(stream.src.max(), stream.dst.max()) >= len(lookup):
        raise StreamFormatError("stream refers to nodes outside its own node map")
    return EventStream(lookup[stream.src], lookup[stream.dst], stream.ts, stream.features, stream.labels,
                       stream.kinds, len(target), [str(v) for v in node_ids])


def union_node_ids(parts: list[EventStream]) -> list[str]:
    seen: dict[str, None] = {}
    for p in parts:
        for v in p.node_ids:
            seen.setdefault(str(v), None)
    return list(seen)


def concat_streams(parts: list[EventStream]) -> EventStream:
    """Chain chronologically adjacent streams into one (event ids re-assigned)."""
    parts = [p for p in parts if len(p)]
    if not parts:
        raise SplitError("nothing to concatenate")
    return EventStream(
        np.concatenate([p.src for p in parts]), np.concatenate([p.dst for p in parts]),
        np.concatenate([p.ts for p in parts]), np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]), np.concatenate([p.kinds for p in parts]),
        max(p.num_nodes for p in parts), list(parts[0].node_ids),
    )


# ------------------------------------------------------------------ ingestion

_RESERVED = {"src", "dst", "ts", "label", "injected_kind"}


def _parse_label(raw, where: str):
    if raw is None or raw == "":
        return -1
    try:
        value = int(float(raw))
    except ValueError:
        raise StreamFormatError(f"{where}: label {raw!r} is not 0/1") from None
    if value not in (0, 1):
        raise StreamFormatError(f"{where}: label {raw!r} is not 0/1")
    return value


def _rows_from_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return [], []
        header = [h.strip() for h in header]
        missing = {"src", "dst", "ts"} - set(header)
        if missing:
            raise StreamFormatError(f"{path}: header lacks column(s) {sorted(missing)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise StreamFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, dict(zip(header, (c.strip() for c in row)))))
    return header, rows


def _rows_from_jsonl(path: Path):
    rows, header = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(f"{path}:{lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise StreamFormatError(f"{path}:{lineno}: expected a JSON object")
            for key in obj:
                if key not in header:
                    header.append(key)
            rows.append((lineno, obj))
    return header, rows


def load_stream(path, fmt: str | None = None, feature_dim: int = 0) -> EventStream:
    """Read a CSV or JSONL event file.

    Node ids (any hashable string) are densely re-indexed in order of first
    appearance; ``stream.node_ids[k]`` is the original id of node k.  Rows are
    stably sorted by timestamp.  Files without feature columns get zero
    feature vectors of width ``feature_dim``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    if fmt == "csv":
        header, rows = _rows_from_csv(path)
    elif fmt == "jsonl":
        header, rows = _rows_from_jsonl(path)
    else:
        raise StreamFormatError(f"unknown format {fmt!r}")

    feat_cols = sorted((h for h in header if h not in _RESERVED), key=_feature_order)
    remap: dict[str, int] = {}
    src, dst, ts, labels, kinds, feats = [], [], [], [], [], []
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        try:
            u, v, t = str(row["src"]), str(row["dst"]), float(row["ts"])
        except KeyError as exc:
            raise StreamFormatError(f"{where}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError):
            raise StreamFormatError(f"{where}: timestamp {row.get('ts')!r} is not a number") from None
        if math.isnan(t):
            raise StreamFormatError(f"{where}: timestamp is NaN and cannot be ordered")
        src.append(remap.setdefault(u, len(remap)))
        dst.append(remap.setdefault(v, len(remap)))
        ts.append(t)
        labels.append(_parse_label(row.get("label"), where))
        kinds.append(str(row.get("injected_kind") or ""))
        try:
            feats.append([float(row[c]) for c in feat_cols])
        except (KeyError, TypeError, ValueError):
            raise StreamFormatError(f"{where}: bad or missing feature value") from None

    n = len(ts)
    width = max(len(feat_cols), feature_dim)
    features = np.zeros((n, width))
    if feat_cols and n:
        features[:, :len(feat_cols)] = np.asarray(feats)
    return EventStream.from_arrays(src, dst, ts, features, labels, kinds,
                                   num_nodes=len(remap), node_ids=list(remap))


def _feature_order(name: str):
    # f0, f1, ..., f10 in numeric order; anything else alphabetically after
    if name.startswith("f") and name[1:].isdigit():
        return (0, int(name[1:]), name)
    return (1, 0, name)


def save_stream(stream: EventStream, path, include_injection: bool = True) -> None:
    """Write a stream as CSV with header src,dst,ts,label[,injected_kind],f0..fk."""
    header = ["src", "dst", "ts", "label"]
    if include_injection:
        header.append("injected_kind")
    header += [f"f{k}" for k in range(stream.feature_dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(stream)):
            label = int(stream.labels[i])
            row = [stream.node_ids[stream.src[i]], stream.node_ids[stream.dst[i]], repr(float(stream.ts[i])),
                   "" if label < 0 else label]
            if include_injection:
                row.append(stream.kinds[i])
            row += [repr(float(f)) for f in stream.features[i]]
            w.writerow(row)


def save_node_map(stream: EventStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "original_id"])
        for k, original in enumerate(stream.node_ids):
            w.writerow([k, original])


# --------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.4
    val_frac: float = 0.2
    test_frac: float = 0.4

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise SplitError(f"split fractions must lie in (0, 1): {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must sum to 1, got {sum(fracs)}")


def chronological_split(stream: EventStream, spec: SplitSpec = SplitSpec()):
    """Contiguous train/val/test blocks by event count; the remainder goes to test."""
    n = len(stream)
    if n == 0:
        raise SplitError("cannot split an empty stream")
    n_train = math.floor(spec.train_frac * n)
    n_val = math.floor(spec.val_frac * n)
    for name, size in (("training", n_train), ("validation", n_val), ("test", n - n_train - n_val)):
        if size == 0:
            raise SplitError(f"empty {name} split for a stream of {n} events")
    return (stream.subset(0, n_train), stream.subset(n_train, n_train + n_val),
            stream.subset(n_train + n_val, n))


# -------------------------------------------------------------------- history


@dataclass
class HistorySample:
    neighbors: np.ndarray
    features: np.ndarray
    timestamps: np.ndarray
    event_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.neighbors)

    @property
    def entries(self) -> list[tuple]:
        return [(int(n), f, float(t)) for n, f, t in zip(self.neighbors, self.features, self.timestamps)]


def _counterpart(stream: EventStream, node: int, pos) -> np.ndarray:
    pos = np.asarray(pos, dtype=np.int64)
    return np.where(stream.src[pos] == node, stream.dst[pos], stream.src[pos])


def sample_history(stream: EventStream, node: int, t: float, before_event: int, L: int) -> HistorySample:
    """Most recent up-to-L interactions of ``node`` strictly before (t, before_event), oldest first."""
    pos = np.asarray(stream.history_positions(node, t, before_event, L), dtype=np.int64)
    return HistorySample(_counterpart(stream, node, pos), stream.features[pos], stream.ts[pos], pos)


@dataclass
class Sequence:
    """An interaction sequence seen from one node: (neighbor, edge features, time) entries."""

    neighbors: np.ndarray
    features: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return len(self.neighbors)

    def drop_last(self) -> "Sequence":
        return Sequence(self.neighbors[:-1], self.features[:-1], self.timestamps[:-1])


def build_sequences(stream: EventStream, event_id: int, L: int) -> dict:
    """For both endpoints of an event: (sequence with the event appended, history only)."""
    u, v, t = int(stream.src[event_id]), int(stream.dst[event_id]), float(stream.ts[event_id])
    feat = stream.features[event_id][None, :]
    out = {}
    for role, node, other in (("src", u, v), ("dst", v, u)):
        hist = sample_history(stream, node, t, event_id, L)
        without = Sequence(hist.neighbors, hist.features, hist.timestamps)
        with_event = Sequence(np.append(hist.neighbors, other), np.vstack([hist.features, feat]),
                              np.append(hist.timestamps, t))
        out[role] = (with_event, without)
    return out


def history_table(stream: EventStream, L: int) -> tuple[np.ndarray, np.ndarray]:
    """History positions for every event's source and destination, padded with -1.

    Returns two (n, L) int arrays; row i lists, oldest first and right-aligned,
    the events that :func:`sample_history` would return for that endpoint.
    """
    n = len(stream)
    src_hist = np.full((n, L), -1, dtype=np.int64)
    dst_hist = np.full((n, L), -1, dtype=np.int64)
    index = stream._node_index()
    # every node's event list is ascending in position, which is the (ts, id) order
    where_in = {node: {p: k for k, p in enumerate(pos)} for node, pos in index.items()}
    for i in range(n):
        for table, node in ((src_hist, int(stream.src[i])), (dst_hist, int(stream.dst[i]))):
            pos = index[node]
            k = where_in[node][i]
            prev = pos[max(0, k - L):k]
            if prev:
                table[i, L - len(prev):] = prev
    return src_hist, dst_hist
