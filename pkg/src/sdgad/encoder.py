"""Sequence encoders and residual event representations.

An encoder maps an interaction sequence seen from one node, i.e. entries
(neighbor, edge features, timestamp) in chronological order, to a fixed-size
embedding.  Sequences are handled in padded batches: ``nbrs`` (B, K) node ids,
``feats`` (B, K, F), ``dts`` (B, K) query time minus entry time, and a 0/1
``mask`` (B, K) marking real entries.

The residual of an endpoint is Enc(history + current event) - Enc(history);
an event's representation is the two endpoint residuals concatenated and passed
through a linear projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .events import EventStream, Sequence, history_table


def time_frequencies(d_time: int, span: float = 2.0) -> np.ndarray:
    """Fixed geometric ladder 10^(-span * k / (d_time - 1)), k = 0..d_time-1."""
    if d_time == 1:
        return np.ones(1)
    return 10.0 ** (-span * np.arange(d_time) / (d_time - 1))


class Encoder:
    """Interface: ``encode_padded`` -> Tensor (B, d_emb) and ``parameters``."""

    d_emb: int
    feature_dim: int

    def parameters(self) -> list[Tensor]:
        return []

    def encode_padded(self, nbrs, feats, dts, mask) -> Tensor:
        raise NotImplementedError

    def encode(self, seq: Sequence, t: float) -> Tensor:
        """Embed one sequence at query time ``t``; returns shape (d_emb,)."""
        feats = np.asarray(seq.features, dtype=np.float64)
        feats = feats.reshape(len(seq), -1) if len(seq) else np.zeros((0, self.feature_dim))
        if feats.shape[1] != self.feature_dim:
            raise ad.ShapeError(f"edge features have width {feats.shape[1]}, encoder expects {self.feature_dim}")
        k = max(len(seq), 1)
        nbrs = np.zeros((1, k), dtype=np.int64)
        fpad = np.zeros((1, k, self.feature_dim))
        dts = np.zeros((1, k))
        mask = np.zeros((1, k))
        if len(seq):
            nbrs[0] = seq.neighbors
            fpad[0] = feats
            dts[0] = t - np.asarray(seq.timestamps, dtype=np.float64)
            mask[0] = 1.0
        return self.encode_padded(nbrs, fpad, dts, mask)[0]


def _masked_mean(values: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    counts = mask.sum(axis=1)
    weights = mask / np.maximum(counts, 1.0)[:, None]
    return ad.tsum(values * weights[:, :, None], axis=1), counts == 0


class ReferenceEncoder(Encoder):
    """Node embeddings + fixed cosine time encoding, mean-pooled, then a 2-layer MLP.

    Each entry becomes [node_emb(neighbor) | edge features | cos(w * dt)].  The
    entries are averaged (an empty sequence uses a learned cold-start vector
    instead) and mapped by tanh-MLP to ``d_emb``.
    """

    def __init__(self, num_nodes: int, feature_dim: int = 0, d_node: int = 16, d_time: int = 16,
                 d_hidden: int = 32, d_emb: int = 32, seed: int = 0, time_span: float = 2.0):
        rng = np.random.default_rng(seed)
        self.num_nodes = num_nodes
        self.feature_dim = feature_dim
        self.d_emb = d_emb
        self.freqs = time_frequencies(d_time, time_span)
        d_in = d_node + feature_dim + d_time
        self.node_emb = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_node), (num_nodes, d_node)), requires_grad=True)
        self.cold = Tensor(rng.normal(0.0, 0.1, d_in), requires_grad=True)
        self.w1 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_hidden)), requires_grad=True)
        self.b1 = Tensor(np.zeros(d_hidden), requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_hidden), (d_hidden, d_emb)), requires_grad=True)
        self.b2 = Tensor(np.zeros(d_emb), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.node_emb, self.cold, self.w1, self.b1, self.w2, self.b2]

    def entry_features(self, nbrs, feats, dts) -> Tensor:
        nbrs = np.asarray(nbrs, dtype=np.int64)
        if feats.shape[-1] != self.feature_dim:
            raise ad.ShapeError(f"edge features have width {feats.shape[-1]}, encoder expects {self.feature_dim}")
        emb = ad.take_rows(self.node_emb, np.clip(nbrs, 0, self.num_nodes - 1))
        time_enc = np.cos(np.asarray(dts)[..., None] * self.freqs)
        return ad.concat([emb, Tensor(feats), Tensor(time_enc)], axis=-1)

    def pool(self, entries: Tensor, mask) -> Tensor:
        mask = np.asarray(mask, dtype=np.float64)
        pooled, empty = _masked_mean(entries, mask)
        pooled = pooled + empty[:, None].astype(np.float64) * self.cold
        hidden = ad.tanh(ad.matmul(pooled, self.w1) + self.b1)
        return ad.matmul(hidden, self.w2) + self.b2

    def encode_padded(self, nbrs, feats, dts, mask) -> Tensor:
        return self.pool(self.entry_features(nbrs, feats, dts), mask)


class MeanFeatureEncoder(Encoder):
    """Parameter-free encoder: the mean edge-feature vector (zeros when empty)."""

    def __init__(self, feature_dim: int):
        self.feature_dim = feature_dim
        self.d_emb = feature_dim

    def encode_padded(self, nbrs, feats, dts, mask) -> Tensor:
        pooled, _ = _masked_mean(Tensor(feats), np.asarray(mask, dtype=np.float64))
        return pooled


@dataclass
class ResidualRepresentation:
    delta_src: Tensor
    delta_dst: Tensor
    concat: Tensor
    projected: Tensor


class EventBatcher:
    """Padded with/without-event sequences for both endpoints of stream events."""

    def __init__(self, stream: EventStream, L: int):
        self.stream = stream
        self.L = L
        self.src_hist, self.dst_hist = history_table(stream, L)

    def endpoint(self, idx, role: str):
        s = self.stream
        idx = np.asarray(idx, dtype=np.int64)
        node = (s.src if role == "src" else s.dst)[idx]
        other = (s.dst if role == "src" else s.src)[idx]
        hist = (self.src_hist if role == "src" else self.dst_hist)[idx]
        valid = hist >= 0
        safe = np.where(valid, hist, 0)
        hist_nbr = np.where(s.src[safe] == node[:, None], s.dst[safe], s.src[safe])
        t = s.ts[idx]
        nbrs = np.concatenate([np.where(valid, hist_nbr, 0), other[:, None]], axis=1)
        feats = np.concatenate([s.features[safe] * valid[..., None], s.features[idx][:, None, :]], axis=1)
        dts = np.concatenate([np.where(valid, t[:, None] - s.ts[safe], 0.0), np.zeros((len(idx), 1))], axis=1)
        mask_with = np.concatenate([valid, np.ones((len(idx), 1), dtype=bool)], axis=1).astype(np.float64)
        mask_without = mask_with.copy()
        mask_without[:, -1] = 0.0
        return nbrs, feats, dts, mask_with, mask_without


class ResidualProjector:
    """Encoder + linear projection to the restricted space of width ``d_proj``.

    With ``residual=False`` the plain embeddings Enc(S^t) of both endpoints are
    concatenated instead of their residuals (used for ablations).
    """

    def __init__(self, encoder: Encoder, d_proj: int = 16, seed: int = 0, residual: bool = True):
        rng = np.random.default_rng(seed)
        self.encoder = encoder
        self.d_proj = d_proj
        self.residual = residual
        d_cat = 2 * encoder.d_emb
        self.w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_cat), (d_cat, d_proj)), requires_grad=True)
        self.b = Tensor(np.zeros(d_proj), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + [self.w, self.b]

    def _delta(self, nbrs, feats, dts, mask_with, mask_without) -> Tensor:
        enc = self.encoder
        if isinstance(enc, ReferenceEncoder):
            entries = enc.entry_features(nbrs, feats, dts)
            with_event = enc.pool(entries, mask_with)
            if not self.residual:
                return with_event
            return with_event - enc.pool(entries, mask_without)
        with_event = enc.encode_padded(nbrs, feats, dts, mask_with)
        if not self.residual:
            return with_event
        return with_event - enc.encode_padded(nbrs, feats, dts, mask_without)

    def represent(self, batcher: EventBatcher, idx) -> ResidualRepresentation:
        delta_src = self._delta(*batcher.endpoint(idx, "src"))
        delta_dst = self._delta(*batcher.endpoint(idx, "dst"))
        cat = ad.concat([delta_src, delta_dst], axis=-1)
        return ResidualRepresentation(delta_src, delta_dst, cat, self.project(cat))

    def project(self, cat) -> Tensor:
        return ad.matmul(cat, self.w) + self.b


def encode(enc: Encoder, seq: Sequence, t: float) -> Tensor:
    return enc.encode(seq, t)


def residual(projector: ResidualProjector, stream: EventStream, event_id: int, L: int) -> ResidualRepresentation:
    """Residual representation of a single event of ``stream``."""
    return projector.represent(EventBatcher(stream, L), [event_id])
