"""Percentile boundaries on rescaled log-likelihoods and the bi-boundary loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# How the two-sided boundary loss is read.  "hinge" charges a normal
# softplus(B_n - l) and an anomaly softplus(l - B_a), i.e. a smooth penalty
# growing with the violation.  "literal" keeps the min/max-around-softplus form,
# under which the normal term vanishes identically.
HINGE = "hinge"
LITERAL = "literal"


@dataclass(frozen=True)
class BoundaryConfig:
    alpha: float = 0.01
    tau: float = 0.1
    mode: str = HINGE

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.mode not in (HINGE, LITERAL):
            raise ValueError(f"unknown boundary loss mode {self.mode!r}")


def normal_boundary(normals, alpha: float) -> float:
    """Nearest-rank lower percentile: element ceil(alpha*N) (1-based) of the ascending sort."""
    values = np.sort(np.asarray(normals, dtype=np.float64).ravel())
    if values.size == 0:
        raise ValueError("normal boundary needs at least one normal likelihood")
    rank = min(max(math.ceil(alpha * values.size), 1), values.size)
    return float(values[rank - 1])


@dataclass
class BatchLikelihoods:
    normals: Tensor
    anomalies: Tensor
    b_n: float
    b_a: float

    @classmethod
    def from_values(cls, normals, anomalies, cfg: BoundaryConfig) -> "BatchLikelihoods":
        """Wrap rescaled likelihoods and set B_n from the normals (detached)."""
        normals = ad.as_tensor(normals)
        anomalies = ad.as_tensor(np.zeros(0) if anomalies is None else anomalies)
        b_n = normal_boundary(normals.data, cfg.alpha)
        return cls(normals, anomalies, b_n, b_n - cfg.tau)

    @property
    def n(self) -> int:
        return int(self.normals.data.size)

    @property
    def m(self) -> int:
        return int(self.anomalies.data.size)


def bi_boundary_loss(batch: BatchLikelihoods, mode: str = HINGE) -> Tensor:
    total_count = batch.n + batch.m
    if total_count == 0:
        raise ValueError("empty batch")
    if mode == HINGE:
        normal_term = ad.tsum(ad.softplus(batch.b_n - batch.normals))
    elif mode == LITERAL:
        # |min(softplus(.), 0)| is zero for every input
        normal_term = Tensor(0.0)
    else:
        raise ValueError(f"unknown boundary loss mode {mode!r}")
    if batch.m:
        anomaly_term = ad.tsum(ad.softplus(batch.anomalies - batch.b_a))
        return (normal_term + anomaly_term) / float(total_count)
    return normal_term / float(total_count)


def bi_boundary_count(batch: BatchLikelihoods) -> int:
    """Number of boundary violations: normals below B_n plus anomalies above B_a."""
    normals = np.asarray(ad.as_tensor(batch.normals).data)
    anomalies = np.asarray(ad.as_tensor(batch.anomalies).data)
    return int(np.sum(normals < batch.b_n) + np.sum(anomalies > batch.b_a))
