"""Two co-centred hypersphere constraints on projected event representations.

Normal representations are held inside the shell r_min < n(x) < r_max, where
n is the pseudo-Huber norm; anomalies are pushed beyond r' = r_max + delta_r.
Each violated branch costs log(1 + e^d) * e^d for violation depth d, which is
at least log 2 the moment the branch switches on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG2 = float(np.log(2.0))

UNLABELED = -1


@dataclass(frozen=True)
class HypersphereConfig:
    r_max: float = 0.4
    gamma: float = 0.9
    delta_r: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.r_max <= 0 or self.delta_r <= 0:
            raise ValueError("r_max and delta_r must be positive")

    @property
    def r_min(self) -> float:
        return self.gamma * self.r_max

    @property
    def r_prime(self) -> float:
        return self.r_max + self.delta_r


def pseudo_huber_norm(x):
    """sqrt(|x|^2 + 1) - 1 along the last axis; accepts arrays or Tensors."""
    if isinstance(x, Tensor):
        return ad.sqrt(ad.tsum(ad.square(x), axis=-1) + 1.0) - 1.0
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(np.sum(x * x, axis=-1) + 1.0) - 1.0


def _penalty(depth: Tensor) -> Tensor:
    # -logsigmoid(-d) * e^d == softplus(d) * e^d
    return ad.softplus(depth) * ad.exp(depth)


def normal_penalty(n: Tensor, cfg: HypersphereConfig) -> Tensor:
    """Per-sample normal loss from precomputed norms ``n``."""
    n = ad.as_tensor(n)
    inner = cfg.r_min - n
    outer = n - cfg.r_max
    below = n.data <= cfg.r_min
    above = n.data >= cfg.r_max
    zero = Tensor(np.zeros_like(n.data))
    return ad.where(below, _penalty(inner), ad.where(above, _penalty(outer), zero))


def abnormal_penalty(n: Tensor, cfg: HypersphereConfig) -> Tensor:
    n = ad.as_tensor(n)
    inside = n.data <= cfg.r_prime
    zero = Tensor(np.zeros_like(n.data))
    return ad.where(inside, _penalty(cfg.r_prime - n), zero)


def loss_normal(x, cfg: HypersphereConfig = HypersphereConfig()) -> Tensor:
    return normal_penalty(pseudo_huber_norm(ad.as_tensor(x)), cfg)


def loss_abnormal(x, cfg: HypersphereConfig = HypersphereConfig()) -> Tensor:
    return abnormal_penalty(pseudo_huber_norm(ad.as_tensor(x)), cfg)


def loss_rr(x, labels, cfg: HypersphereConfig = HypersphereConfig()) -> Tensor:
    """Mean restriction loss over a batch of representations ``x`` (B, d).

    Label 1 takes the anomaly branch; 0 and UNLABELED take the normal branch.
    """
    x = ad.as_tensor(x)
    labels = np.asarray(labels)
    n = pseudo_huber_norm(x)
    per_sample = ad.where(labels == 1, abnormal_penalty(n, cfg), normal_penalty(n, cfg))
    return ad.mean(per_sample)


def violation_normal(n, cfg: HypersphereConfig) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return np.maximum(cfg.r_min - n, 0.0) + np.maximum(n - cfg.r_max, 0.0)


def violation_abnormal(n, cfg: HypersphereConfig) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return np.maximum(cfg.r_prime - n, 0.0)
