"""Affine-coupling normalizing flow with exact log-likelihoods.

Layer f keeps the coordinates selected by its mask and maps the rest as
``y = x * exp(s(x_m)) + t(x_m)``.  Masks alternate between the first and second
half of the coordinates, so with two or more layers every coordinate moves.
Scale outputs are squashed to ``scale_bound * tanh(.)`` before exponentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))


def coupling_mask(dim: int, layer: int) -> np.ndarray:
    """1.0 where the coordinate is held fixed (conditioner input) in ``layer``."""
    idx = np.arange(dim)
    half = dim // 2
    fixed = idx < half if layer % 2 == 0 else idx >= half
    return fixed.astype(np.float64)


class CouplingLayer:
    def __init__(self, dim: int, hidden: int, mask: np.ndarray, rng: np.random.Generator,
                 scale_bound: float = 2.0):
        self.dim = dim
        self.mask = mask
        self.scale_bound = scale_bound
        std = 1.0 / np.sqrt(max(dim, 1))
        self.w_in = Tensor(rng.normal(0.0, std, (dim, hidden)), requires_grad=True)
        self.b_in = Tensor(np.zeros(hidden), requires_grad=True)
        # output heads start at zero so a fresh layer is the identity
        self.w_s = Tensor(np.zeros((hidden, dim)), requires_grad=True)
        self.b_s = Tensor(np.zeros(dim), requires_grad=True)
        self.w_t = Tensor(np.zeros((hidden, dim)), requires_grad=True)
        self.b_t = Tensor(np.zeros(dim), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w_in, self.b_in, self.w_s, self.b_s, self.w_t, self.b_t]

    def _conditioner(self, fixed):
        h = ad.tanh(ad.matmul(fixed, self.w_in) + self.b_in)
        free = 1.0 - self.mask
        s = self.scale_bound * ad.tanh(ad.matmul(h, self.w_s) + self.b_s) * free
        t = (ad.matmul(h, self.w_t) + self.b_t) * free
        return s, t

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        fixed = x * self.mask
        s, t = self._conditioner(fixed)
        y = fixed + (1.0 - self.mask) * (x * ad.exp(s) + t)
        return y, ad.tsum(s, axis=-1)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        fixed = y * self.mask
        s, t = self._conditioner(Tensor(fixed))
        return fixed + (1.0 - self.mask) * ((y - t.data) * np.exp(-s.data))


class FlowModel:
    """Stack of ``num_layers`` coupling layers on R^dim."""

    def __init__(self, dim: int, num_layers: int = 4, hidden: int = 32, seed: int = 0,
                 scale_bound: float = 2.0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.layers = [
            CouplingLayer(dim, hidden, coupling_mask(dim, f), rng, scale_bound)
            for f in range(num_layers)
        ]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Map x (B, d) to latent z and the summed log|det J| per sample."""
        z = ad.as_tensor(x)
        if z.shape[-1] != self.dim:
            raise ad.ShapeError(f"flow expects last dim {self.dim}, got shape {z.shape}")
        log_det = Tensor(np.zeros(z.shape[:-1]))
        for layer in self.layers:
            z, ld = layer.forward(z)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, z) -> np.ndarray:
        x = np.asarray(z, dtype=np.float64)
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        return x

    def max_log_likelihood(self) -> float:
        """Supremum of log p over all inputs and parameters of this architecture.

        Each layer adds at most ``scale_bound`` per free coordinate to log|det J|
        and the base density peaks at -(d/2) log 2pi.
        """
        free = sum(float((1.0 - layer.mask).sum()) for layer in self.layers)
        return free * self.layers[0].scale_bound - 0.5 * self.dim * LOG_2PI if self.layers else -0.5 * self.dim * LOG_2PI

    def log_likelihood(self, x) -> Tensor:
        z, log_det = self.forward(x)
        base = -0.5 * self.dim * LOG_2PI - 0.5 * ad.tsum(ad.square(z), axis=-1)
        return base + log_det


def forward_transform(flow: FlowModel, x):
    z, log_det = flow.forward(x)
    return z.data, log_det.data


def inverse_transform(flow: FlowModel, z) -> np.ndarray:
    return flow.inverse(z)


def log_likelihood(flow: FlowModel, x) -> Tensor:
    return flow.log_likelihood(x)


def ml_loss(flow: FlowModel, x) -> Tensor:
    """Negative mean log-likelihood of a batch of normal samples."""
    x = ad.as_tensor(x)
    if x.shape[0] == 0:
        raise ValueError("maximum-likelihood loss needs at least one normal sample")
    return -ad.mean(flow.log_likelihood(x))


@dataclass(frozen=True)
class LikelihoodConfig:
    """Maps log-likelihoods l to [-1, 0] by clamp((l - upper) / constant, -1, 0).

    ``upper`` is either a number or "flow_sup" (the architecture's supremum of
    log p, so no input saturates at 0).  ``rescale_constant`` of None means
    upper + d * log(2*pi), which sends l = -d log(2 pi) to -1.
    """

    rescale_constant: float | None = None
    upper: float | str = 0.0

    def anchor(self, flow: "FlowModel | None" = None) -> float:
        if self.upper == "flow_sup":
            if flow is None:
                raise ValueError("the flow_sup anchor needs a flow")
            return flow.max_log_likelihood()
        return float(self.upper)

    def constant(self, dim: int, upper: float = 0.0) -> float:
        c = upper + dim * LOG_2PI if self.rescale_constant is None else self.rescale_constant
        if c <= 0:
            raise ValueError(f"rescale constant must be positive, got {c}")
        return float(c)


def rescale(loglik, constant: float, upper: float = 0.0):
    """clamp((loglik - upper) / constant, -1, 0); Tensors keep their graph."""
    if isinstance(loglik, Tensor):
        return ad.clip((loglik - upper) / constant, -1.0, 0.0)
    return np.clip((np.asarray(loglik, dtype=np.float64) - upper) / constant, -1.0, 0.0)
