"""Joint training of encoder, projection and flow, plus anomaly scoring.

Per mini-batch the loss is  ML + lambda1 * BO + lambda2 * RR  where ML is the
flow's negative log-likelihood on (visibly) normal events, BO the bi-boundary
loss on rescaled likelihoods with boundaries recomputed from the batch, and RR
the hypersphere restriction loss on the projected representations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .boundary import BatchLikelihoods, BoundaryConfig, bi_boundary_loss, normal_boundary
from .encoder import EventBatcher, MeanFeatureEncoder, ReferenceEncoder, ResidualProjector
from .flow import FlowModel, LikelihoodConfig, rescale
from .metrics import average_precision
from .restriction import HypersphereConfig, loss_rr

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


class SupervisionError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "reference"
    d_node: int = 16
    d_time: int = 16
    d_hidden: int = 32
    d_emb: int = 32
    d_proj: int = 16
    history: int = 2
    residual: bool = True
    flow_layers: int = 4
    flow_hidden: int = 32
    scale_bound: float = 2.0
    time_span: float = 2.0
    rescale_constant: float | None = None
    rescale_upper: float | str = "flow_sup"


@dataclass(frozen=True)
class TrainingConfig:
    lambda1: float = 1.0
    lambda2: float = 0.5
    batch_size: int = 200
    max_epochs: int = 200
    patience: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    seed: int = 0
    setting: str = "S3"
    k: int = 1
    num_runs: int = 5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.setting not in ("S1", "S2", "S3"):
            raise ValueError(f"unknown supervision setting {self.setting!r}")
        if self.setting == "S2" and self.k not in (1, 2, 3):
            raise ValueError("S2 takes k in {1, 2, 3}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")


# ---------------------------------------------------------------- the model


class SDGADModel:
    def __init__(self, num_nodes: int, feature_dim: int, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        seeds = np.random.SeedSequence(seed).generate_state(3)
        if cfg.encoder == "reference":
            enc = ReferenceEncoder(num_nodes, feature_dim, cfg.d_node, cfg.d_time, cfg.d_hidden, cfg.d_emb,
                                   seed=int(seeds[0]), time_span=cfg.time_span)
        elif cfg.encoder == "mean":
            enc = MeanFeatureEncoder(feature_dim)
        else:
            raise ValueError(f"unknown encoder {cfg.encoder!r}")
        self.projector = ResidualProjector(enc, cfg.d_proj, seed=int(seeds[1]), residual=cfg.residual)
        self.flow = FlowModel(cfg.d_proj, cfg.flow_layers, cfg.flow_hidden, seed=int(seeds[2]),
                              scale_bound=cfg.scale_bound)
        lcfg = LikelihoodConfig(cfg.rescale_constant, cfg.rescale_upper)
        self.rescale_upper = lcfg.anchor(self.flow)
        self.rescale_constant = lcfg.constant(cfg.d_proj, self.rescale_upper)
        self.b_n: float | None = None
        self.b_a: float | None = None

    def parameters(self) -> list[Tensor]:
        return self.projector.parameters() + self.flow.parameters()

    def represent(self, batcher: EventBatcher, idx) -> Tensor:
        return self.projector.represent(batcher, idx).projected

    def forward(self, batcher: EventBatcher, idx):
        """Projected representations, raw log-likelihoods and rescaled ones."""
        x = self.represent(batcher, idx)
        loglik = self.flow.log_likelihood(x)
        return x, loglik, rescale(loglik, self.rescale_constant, self.rescale_upper)

    def score(self, batcher: EventBatcher, idx, chunk: int = 1000) -> tuple[np.ndarray, np.ndarray]:
        """Rescaled log-likelihoods and anomaly scores 1 - exp(l) for events ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        parts = [self.forward(batcher, idx[i:i + chunk])[2].data for i in range(0, len(idx), chunk)]
        ll = np.concatenate(parts) if parts else np.zeros(0)
        return ll, anomaly_score(ll)

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.data.shape != np.shape(a):
                raise ValueError(f"parameter shape {np.shape(a)} does not match {p.data.shape}")
            p.data = np.array(a, dtype=np.float64)


def anomaly_score(rescaled):
    return 1.0 - np.exp(np.asarray(rescaled, dtype=np.float64))


# ---------------------------------------------------------------- optimizer


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -------------------------------------------------------------- supervision


def prepare_supervision(labels, setting: str, seed: int = 0, k: int = 1) -> np.ndarray:
    """Labels the learner may see: S1 all, S2 exactly k anomalies, S3 none.

    Unlabeled entries (-1) and hidden anomalies are shown as normal (0).
    """
    labels = np.asarray(labels, dtype=np.int64)
    visible = np.where(labels == 1, 1, 0)
    if setting == "S1":
        return visible
    if setting == "S3":
        return np.zeros_like(visible)
    if setting != "S2":
        raise SupervisionError(f"unknown supervision setting {setting!r}")
    anomalies = np.flatnonzero(visible)
    if len(anomalies) < k:
        raise SupervisionError(f"S2 needs {k} labeled anomalies, split has {len(anomalies)}")
    keep = np.random.default_rng(seed).choice(anomalies, size=k, replace=False)
    out = np.zeros_like(visible)
    out[keep] = 1
    return out


# --------------------------------------------------------------------- loss


@dataclass
class LossParts:
    total: Tensor
    ml: float
    bo: float
    rr: float
    b_n: float
    b_a: float


def combined_loss(x: Tensor, loglik: Tensor, rescaled: Tensor, visible, tcfg: TrainingConfig,
                  sphere: HypersphereConfig, bcfg: BoundaryConfig) -> LossParts:
    visible = np.asarray(visible)
    normal_idx = np.flatnonzero(visible == 0)
    anomaly_idx = np.flatnonzero(visible == 1)
    if normal_idx.size == 0:
        raise ValueError("batch has no normal samples; the likelihood loss is undefined")
    ml = -ad.mean(loglik[normal_idx])
    batch = BatchLikelihoods.from_values(rescaled[normal_idx], rescaled[anomaly_idx] if anomaly_idx.size else None,
                                         bcfg)
    bo = bi_boundary_loss(batch, bcfg.mode)
    rr = loss_rr(x, visible, sphere)
    total = ml + tcfg.lambda1 * bo + tcfg.lambda2 * rr
    return LossParts(total, ml.item(), bo.item(), rr.item(), batch.b_n, batch.b_a)


# ----------------------------------------------------------------- training


@dataclass
class EpochLog:
    epoch: int
    ml: float
    bo: float
    rr: float
    total: float
    val_metric: float
    val_metric_name: str


@dataclass
class TrainResult:
    model: SDGADModel
    best_epoch: int
    best_metric: float
    history: list[EpochLog] = field(default_factory=list)


def _validation_metric(model: SDGADModel, batcher: EventBatcher, val_idx, val_labels, tcfg: TrainingConfig,
                       sphere: HypersphereConfig, bcfg: BoundaryConfig) -> tuple[float, str]:
    labels = np.asarray(val_labels)
    if labels.size and (labels == 1).any() and (labels == 0).any():
        _, scores = model.score(batcher, val_idx)
        return average_precision(scores, labels), "ap"
    # nothing to rank: use the negated training objective on the whole split
    x, loglik, ll = model.forward(batcher, val_idx)
    parts = combined_loss(x, loglik, ll, np.zeros(len(val_idx), dtype=np.int64), tcfg, sphere, bcfg)
    return -parts.total.item(), "neg_objective"


def train(model: SDGADModel, batcher: EventBatcher, train_idx, visible_labels, val_idx, val_labels,
          tcfg: TrainingConfig = TrainingConfig(), sphere: HypersphereConfig = HypersphereConfig(),
          bcfg: BoundaryConfig = BoundaryConfig()) -> TrainResult:
    """Chronological mini-batch training with early stopping on a validation metric.

    ``visible_labels`` are aligned with ``train_idx`` (see prepare_supervision).
    The parameters of the best validation epoch are restored at the end and the
    model's boundaries (B_n, B_a) are set from its training-split normals.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    visible_labels = np.asarray(visible_labels)
    opt = AdamW(model.parameters(), tcfg.learning_rate, tcfg.weight_decay)
    best_metric, best_epoch, best_state = -math.inf, -1, model.state()
    history: list[EpochLog] = []
    since_best = 0
    for epoch in range(tcfg.max_epochs):
        sums = np.zeros(4)
        batches = 0
        for start in range(0, len(train_idx), tcfg.batch_size):
            idx = train_idx[start:start + tcfg.batch_size]
            vis = visible_labels[start:start + tcfg.batch_size]
            if not (vis == 0).any():
                continue
            x, loglik, ll = model.forward(batcher, idx)
            parts = combined_loss(x, loglik, ll, vis, tcfg, sphere, bcfg)
            if not math.isfinite(parts.total.item()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}: "
                    f"ml={parts.ml} bo={parts.bo} rr={parts.rr}")
            opt.zero_grad()
            ad.backward(parts.total)
            opt.step()
            sums += (parts.ml, parts.bo, parts.rr, parts.total.item())
            batches += 1
        sums /= max(batches, 1)
        metric, name = _validation_metric(model, batcher, val_idx, val_labels, tcfg, sphere, bcfg)
        history.append(EpochLog(epoch, *map(float, sums), metric, name))
        log.debug("epoch %d ml=%.4f bo=%.4f rr=%.4f val_%s=%.4f", epoch, *sums[:3], name, metric)
        if metric > best_metric:
            best_metric, best_epoch, best_state = metric, epoch, model.state()
            since_best = 0
        else:
            since_best += 1
        if since_best >= tcfg.patience:
            break
    model.load_state(best_state)
    set_boundaries(model, batcher, train_idx[visible_labels == 0], bcfg)
    return TrainResult(model, best_epoch, best_metric, history)


def set_boundaries(model: SDGADModel, batcher: EventBatcher, normal_idx, bcfg: BoundaryConfig) -> None:
    ll, _ = model.score(batcher, normal_idx)
    model.b_n = normal_boundary(ll, bcfg.alpha)
    model.b_a = model.b_n - bcfg.tau


# --------------------------------------------------------------- checkpoint


def save_checkpoint(path, model: SDGADModel, config_snapshot: dict, best_metric: float, epoch: int,
                    node_ids=None) -> None:
    """npz container: param_000.. arrays plus a JSON ``meta`` record.

    ``node_ids`` (original id of each node index) lets a reloaded stream be
    re-aligned with the embedding table.
    """
    meta = {
        "version": CHECKPOINT_VERSION,
        "model": asdict(model.cfg),
        "num_nodes": int(model.projector.encoder.num_nodes) if hasattr(model.projector.encoder, "num_nodes") else 0,
        "feature_dim": int(model.projector.encoder.feature_dim),
        "shapes": [list(p.data.shape) for p in model.parameters()],
        "b_n": model.b_n,
        "b_a": model.b_a,
        "best_metric": best_metric,
        "epoch": epoch,
        "config": config_snapshot,
        "node_ids": None if node_ids is None else [str(v) for v in node_ids],
    }
    arrays = {f"param_{i:03d}": p.data for i, p in enumerate(model.parameters())}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[SDGADModel, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            arrays = [data[f"param_{i:03d}"] for i in range(len(meta["shapes"]))]
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from None
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    model = SDGADModel(meta["num_nodes"], meta["feature_dim"], ModelConfig(**meta["model"]))
    model.load_state(arrays)
    model.b_n, model.b_a = meta["b_n"], meta["b_a"]
    return model, meta
