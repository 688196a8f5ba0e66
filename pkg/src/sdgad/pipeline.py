"""One experiment run: split, inject, hide labels, train, score the test split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryConfig
from .encoder import EventBatcher
from .events import EventStream, SplitSpec, chronological_split, concat_streams
from .injection import InjectionPlan, apply_plan
from .metrics import auroc, average_precision, boundary_threshold, f1_at_threshold
from .restriction import HypersphereConfig
from .trainer import ModelConfig, SDGADModel, TrainingConfig, TrainResult, prepare_supervision, train


@dataclass
class PreparedData:
    stream: EventStream
    batcher: EventBatcher
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def labels(self, idx) -> np.ndarray:
        return np.maximum(self.stream.labels[idx], 0)


def prepare_data(stream: EventStream, split: SplitSpec, plan: InjectionPlan | None, history: int) -> PreparedData:
    train_s, val_s, test_s = chronological_split(stream, split)
    if plan is not None:
        train_s, val_s, test_s = apply_plan(train_s, val_s, test_s, plan)
    full = concat_streams([train_s, val_s, test_s])
    a, b = len(train_s), len(train_s) + len(val_s)
    return PreparedData(full, EventBatcher(full, history), np.arange(a), np.arange(a, b), np.arange(b, len(full)))


@dataclass
class RunResult:
    seed: int
    auroc: float
    ap: float
    f1: float
    threshold: float
    test_event_ids: np.ndarray
    test_ts: np.ndarray
    test_loglik: np.ndarray
    test_scores: np.ndarray
    test_labels: np.ndarray
    train_result: TrainResult

    @property
    def model(self) -> SDGADModel:
        return self.train_result.model


def run_once(data: PreparedData, seed: int, model_cfg: ModelConfig = ModelConfig(),
             tcfg: TrainingConfig = TrainingConfig(), sphere: HypersphereConfig = HypersphereConfig(),
             bcfg: BoundaryConfig = BoundaryConfig()) -> RunResult:
    visible = prepare_supervision(data.stream.labels[data.train_idx], tcfg.setting, seed=seed, k=tcfg.k)
    model = SDGADModel(data.stream.num_nodes, data.stream.feature_dim, model_cfg, seed=seed)
    result = train(model, data.batcher, data.train_idx, visible, data.val_idx, data.labels(data.val_idx),
                   tcfg, sphere, bcfg)
    ll, scores = model.score(data.batcher, data.test_idx)
    labels = data.labels(data.test_idx)
    threshold = boundary_threshold(model.b_a)
    has_both = labels.any() and not labels.all()
    return RunResult(
        seed=seed,
        auroc=auroc(scores, labels) if has_both else float("nan"),
        ap=average_precision(scores, labels) if labels.any() else float("nan"),
        f1=f1_at_threshold(scores, labels, threshold),
        threshold=threshold,
        test_event_ids=data.test_idx, test_ts=data.stream.ts[data.test_idx],
        test_loglik=ll, test_scores=scores, test_labels=labels, train_result=result,
    )
