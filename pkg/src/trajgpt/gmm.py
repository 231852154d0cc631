"""Gaussian mixture densities for the travel-time and duration heads.

All functions broadcast over leading batch dimensions: parameters have shape
``(..., K)`` and evaluation points ``(...)``. Training uses the plain mixture
density; inference and metrics use the mixture clipped to ``[0, inf)`` and
renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

EPS = 1e-4
DEGENERATE_MASS = 1e-12
MAX_REJECTIONS = 10_000

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class ParameterError(ValueError):
    pass


class DegenerateSupportError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianMixtureParams:
    weights: torch.Tensor
    means: torch.Tensor
    scales: torch.Tensor

    @classmethod
    def of(cls, weights, means, scales, dtype=torch.float64) -> "GaussianMixtureParams":
        return cls(*(torch.as_tensor(v, dtype=dtype) for v in (weights, means, scales)))

    @property
    def n_components(self) -> int:
        return self.weights.shape[-1]

    def validate(self) -> "GaussianMixtureParams":
        w, mu, sd = self.weights, self.means, self.scales
        if not (w.shape == mu.shape == sd.shape) or w.shape[-1] < 1:
            raise ParameterError(f"shape mismatch: {w.shape}, {mu.shape}, {sd.shape}")
        if (w < 0).any() or ((w.sum(-1) - 1).abs() > 1e-6).any():
            raise ParameterError("weights must be non-negative and sum to 1")
        if not (sd > 0).all():
            raise ParameterError("scales must be positive")
        if not (torch.isfinite(mu).all() and torch.isfinite(sd).all()):
            raise ParameterError("means and scales must be finite")
        return self

    def __getitem__(self, idx) -> "GaussianMixtureParams":
        return GaussianMixtureParams(self.weights[idx], self.means[idx], self.scales[idx])

    def detach(self) -> "GaussianMixtureParams":
        return GaussianMixtureParams(
            self.weights.detach(), self.means.detach(), self.scales.detach()
        )


def positive_params(raw: torch.Tensor, eps: float = EPS) -> GaussianMixtureParams:
    """Map ``(..., 3K)`` unconstrained outputs to a valid mixture.

    Layout of the last axis: ``[weight logits | means | scales]``. Weights and
    scales go through softplus + eps; weights are then normalized.
    """
    k = raw.shape[-1] // 3
    if raw.shape[-1] != 3 * k or k < 1:
        raise ParameterError(f"last dimension {raw.shape[-1]} is not 3K")
    w_raw, means, s_raw = raw[..., :k], raw[..., k : 2 * k], raw[..., 2 * k :]
    w = F.softplus(w_raw) + eps
    return GaussianMixtureParams(w / w.sum(-1, keepdim=True), means, F.softplus(s_raw) + eps)


def _component_log_pdf(p: GaussianMixtureParams, x: torch.Tensor) -> torch.Tensor:
    z = (x.unsqueeze(-1) - p.means) / p.scales
    return -0.5 * z * z - torch.log(p.scales) - _LOG_SQRT_2PI


def log_pdf(p: GaussianMixtureParams, x) -> torch.Tensor:
    """``log sum_k w_k N(x; mu_k, sd_k^2)`` via log-sum-exp."""
    x = torch.as_tensor(x, dtype=p.means.dtype)
    log_w = torch.log(p.weights.clamp_min(torch.finfo(p.weights.dtype).tiny))
    return torch.logsumexp(log_w + _component_log_pdf(p, x), dim=-1)


def cdf(p: GaussianMixtureParams, x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=p.means.dtype)
    return (p.weights * torch.special.ndtr((x.unsqueeze(-1) - p.means) / p.scales)).sum(-1)


def positive_mass(p: GaussianMixtureParams) -> torch.Tensor:
    """``1 - cdf(0)``, computed from the upper tail to keep precision."""
    return (p.weights * torch.special.ndtr(p.means / p.scales)).sum(-1)


def clipped_log_pdf(p: GaussianMixtureParams, x) -> torch.Tensor:
    """Log density of the mixture restricted to ``x >= 0``; ``-inf`` below zero."""
    x = torch.as_tensor(x, dtype=p.means.dtype)
    lp = log_pdf(p, x) - torch.log(positive_mass(p))
    return torch.where(x >= 0, lp, torch.full_like(lp, -math.inf))


def interval_prob_clipped(p: GaussianMixtureParams, lo, hi) -> torch.Tensor:
    """Mass of ``[lo, hi]`` under the clipped, renormalized mixture.

    Positions whose positive mass is below 1e-12 have degenerate support and
    get probability 0; :func:`degenerate_support` reports them.
    """
    lo = torch.as_tensor(lo, dtype=p.means.dtype)
    hi = torch.as_tensor(hi, dtype=p.means.dtype)
    if (lo > hi).any():
        raise ValueError("interval lower bound exceeds upper bound")
    zero = torch.zeros((), dtype=p.means.dtype)
    mass = positive_mass(p)
    # Upper-tail differences avoid cancellation when both ends are far right.
    upper = lambda x: (p.weights * torch.special.ndtr((p.means - x.unsqueeze(-1)) / p.scales)).sum(-1)
    inside = (upper(torch.maximum(lo, zero)) - upper(hi)).clamp_min(0.0)
    inside = torch.where(hi <= 0, torch.zeros_like(inside), inside)
    ok = mass >= DEGENERATE_MASS
    return torch.where(ok, inside / torch.where(ok, mass, torch.ones_like(mass)), torch.zeros_like(inside))


def degenerate_support(p: GaussianMixtureParams) -> torch.Tensor:
    return positive_mass(p) < DEGENERATE_MASS


def sample(p: GaussianMixtureParams, rng: np.random.Generator) -> float:
    """One draw from the clipped mixture by ancestral sampling with rejection."""
    w = p.weights.detach().double().cpu().numpy().reshape(-1)
    mu = p.means.detach().double().cpu().numpy().reshape(-1)
    sd = p.scales.detach().double().cpu().numpy().reshape(-1)
    w = w / w.sum()
    for _ in range(MAX_REJECTIONS):
        k = rng.choice(len(w), p=w)
        x = rng.normal(mu[k], sd[k])
        if x >= 0:
            return float(x)
    raise DegenerateSupportError(
        f"{MAX_REJECTIONS} consecutive negative draws; clipped support is degenerate"
    )


def clipped_mode(p: GaussianMixtureParams, grid_points: int = 2048) -> float:
    """Argmax of the clipped density over the component means and a fine grid."""
    w = p.weights.detach().double().reshape(-1)
    mu = p.means.detach().double().reshape(-1)
    sd = p.scales.detach().double().reshape(-1)
    q = GaussianMixtureParams(w, mu, sd)
    hi = float((mu + 4 * sd).max().clamp_min(0.0))
    candidates = torch.cat(
        [mu.clamp_min(0.0), torch.linspace(0.0, max(hi, 1e-12), grid_points, dtype=torch.float64)]
    )
    dens = log_pdf(q, candidates)
    return float(candidates[int(torch.argmax(dens))])
