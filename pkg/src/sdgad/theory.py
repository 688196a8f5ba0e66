"""Numeric checks of the error bounds for the boundary and restriction losses."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .boundary import BatchLikelihoods, bi_boundary_count
from .flow import LOG_2PI
from .restriction import (
    LOG2,
    HypersphereConfig,
    abnormal_penalty,
    normal_penalty,
    pseudo_huber_norm,
    violation_abnormal,
    violation_normal,
)

log = logging.getLogger(__name__)


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    context: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return bool(self.lhs <= self.rhs + 1e-9)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["satisfied"] = self.satisfied
        return out


def _values(t) -> np.ndarray:
    return np.asarray(getattr(t, "data", t), dtype=np.float64).ravel()


def proposition1_check(batch: BatchLikelihoods, d: int, lambda1: float, eps: float) -> BoundReport:
    """Margin-violation error of the likelihood boundaries against its bounds.

    With B_n' = B_n - eps and B_a' = B_a + eps, the error is the mean normal
    shortfall below B_n' plus the mean anomaly excess above B_a'.  Reported:

    * ``rhs``: ((d/2) log 2pi - 1/2)(B_n - B_a) / lambda1 + N / (N + M), the
      final-line bound, which presumes an optimum of ML + lambda1 * BO;
    * ``intermediate``: max(1 + B_n', -B_a') * (c_n / N + c_a / M), with c_n, c_a
      the boundary violation counts; it holds for any batch in [-1, 0];
    * ``pooled_intermediate``: (B_n - B_a) * (c_n + c_a) / (N + M) + N / (N + M),
      the pooled-count form, reported only (it can fail when anomalies
      outnumber normals or sit far above B_a).
    """
    gap = batch.b_n - batch.b_a
    if not 0.0 < eps < gap:
        raise ValueError(f"eps must lie in (0, {gap}), got {eps}")
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    normals, anomalies = _values(batch.normals), _values(batch.anomalies)
    n, m = normals.size, anomalies.size
    b_n2, b_a2 = batch.b_n - eps, batch.b_a + eps
    lhs = float(np.mean(np.maximum(b_n2 - normals, 0.0))) if n else 0.0
    if m:
        lhs += float(np.mean(np.maximum(anomalies - b_a2, 0.0)))
    share = n / (n + m)
    c_n = int(np.sum(normals < batch.b_n))
    c_a = int(np.sum(anomalies > batch.b_a))
    per_class = (c_n / n if n else 0.0) + (c_a / m if m else 0.0)
    intermediate = max(1.0 + b_n2, -b_a2) * per_class
    pooled = gap * bi_boundary_count(batch) / (n + m) + share
    rhs = (0.5 * d * LOG_2PI - 0.5) * gap / lambda1 + share
    return BoundReport("proposition1", lhs, rhs, {
        "N": n, "M": m, "d": d, "lambda1": lambda1, "eps": eps, "B_n": batch.b_n, "B_a": batch.b_a,
        "violations": c_n + c_a, "intermediate": intermediate,
        "intermediate_satisfied": bool(lhs <= intermediate + 1e-9),
        "pooled_intermediate": pooled,
        "pooled_intermediate_satisfied": bool(lhs <= pooled + 1e-9),
    })


def proposition2_pointwise(norms, labels, cfg: HypersphereConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample (violation, bound, ok) for the restriction error bound."""
    norms = np.asarray(norms, dtype=np.float64)
    labels = np.asarray(labels)
    anomalous = labels == 1
    violation = np.where(anomalous, violation_abnormal(norms, cfg), violation_normal(norms, cfg))
    loss = np.where(anomalous, abnormal_penalty(norms, cfg).data, normal_penalty(norms, cfg).data)
    coef = np.where(anomalous, cfg.r_prime, max(cfg.r_min, 1.0 - cfg.r_max)) / LOG2
    bound = coef * loss
    return violation, bound, violation <= bound + 1e-12


def proposition2_check(x, labels, cfg: HypersphereConfig = HypersphereConfig()) -> BoundReport:
    """Restriction margin-violation error against (C_r / log 2)(E[L_n] + E[L_a]).

    Samples with pseudo-Huber norm outside [0, 1] are dropped (with a warning)
    because the bound assumes that range.
    """
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    norms = pseudo_huber_norm(x)
    keep = norms <= 1.0
    if not keep.all():
        log.warning("dropping %d samples with pseudo-Huber norm > 1", int((~keep).sum()))
    norms, labels = norms[keep], labels[keep]
    if norms.size == 0:
        raise ValueError("no samples left with norm in [0, 1]")
    anomalous = labels == 1
    violation, _, ok = proposition2_pointwise(norms, labels, cfg)
    loss_n = normal_penalty(norms[~anomalous], cfg).data
    loss_a = abnormal_penalty(norms[anomalous], cfg).data

    def _mean(v):
        return float(v.mean()) if v.size else 0.0

    lhs = _mean(violation[~anomalous]) + _mean(violation[anomalous])
    c_r = max(cfg.r_min, 1.0 - cfg.r_max, cfg.r_prime)
    rhs = c_r / LOG2 * (_mean(loss_n) + _mean(loss_a))
    return BoundReport("proposition2", lhs, rhs, {
        "N": int((~anomalous).sum()), "M": int(anomalous.sum()), "C_r": c_r,
        "r_min": cfg.r_min, "r_max": cfg.r_max, "r_prime": cfg.r_prime,
        "dropped": int((~keep).sum()), "pointwise_failures": int((~ok).sum()),
    })
