"""Anchor alignment losses, the teacher objective and the modality-gap metric.

Three anchors are supported besides ``none``:

``fixed_modality``
    every modality latent is pulled toward the paired latent of base modality k
    with a mean squared error;
``adaptive``
    the same pairwise errors weighted by learnable ``w = J * softmax(theta)``;
``standard_normal``
    a per-element Gaussian KL of the encoder's (mean, log-variance) heads
    against N(0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .nets import LatentFeatures

ANCHOR_KINDS = ("none", "standard_normal", "fixed_modality", "adaptive")


class AnchorConfigError(ValueError):
    pass


@dataclass
class AnchorSpec:
    kind: str = "none"
    base_k: int = 0
    theta: Optional[list[float]] = None
    formula_variant: str = "closed_form"

    def validate(self, n_modalities: int) -> None:
        if self.kind not in ANCHOR_KINDS:
            raise AnchorConfigError(f"unknown anchor kind {self.kind!r}")
        if self.kind in ("fixed_modality", "adaptive") and not 0 <= self.base_k < n_modalities:
            raise AnchorConfigError(f"base_k {self.base_k} outside [0, {n_modalities})")
        if self.theta is not None:
            if len(self.theta) != n_modalities or not np.all(np.isfinite(self.theta)):
                raise AnchorConfigError("theta needs J finite values")
        if self.formula_variant not in ("closed_form", "paper_literal"):
            raise AnchorConfigError(f"unknown formula_variant {self.formula_variant!r}")

    @property
    def needs_gaussian_stats(self) -> bool:
        return self.kind == "standard_normal"


class AdaptiveWeights(nn.Module):
    """Learnable modality weights ``w = J * softmax(theta)``; positive and summing to J."""

    def __init__(self, n_modalities: int, theta: Optional[Sequence[float]] = None):
        super().__init__()
        init = torch.zeros(n_modalities, dtype=torch.float64) if theta is None else torch.tensor(theta, dtype=torch.float64)
        self.theta = nn.Parameter(init)

    @property
    def n_modalities(self) -> int:
        return self.theta.numel()

    def forward(self) -> torch.Tensor:
        return self.n_modalities * torch.softmax(self.theta, dim=0)

    def numpy(self) -> np.ndarray:
        with torch.no_grad():
            return self().numpy().copy()


def _values(z):
    return z.values if isinstance(z, LatentFeatures) else z


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def loss_align_fixed(z_j, z_k) -> torch.Tensor:
    """Mean squared difference between paired latents of two modalities."""
    return mse(_values(z_j), _values(z_k))


def loss_align_adaptive(latents: Sequence, weights, base_k: int) -> torch.Tensor:
    """``sum_j w_j * mse(z_j, z_k)``; ``weights`` is an :class:`AdaptiveWeights` or a weight tensor."""
    if len(latents) < 2:
        raise ValueError("adaptive alignment needs at least two modalities")
    if not 0 <= base_k < len(latents):
        raise ValueError(f"base_k {base_k} outside [0, {len(latents)})")
    w = weights() if isinstance(weights, AdaptiveWeights) else weights
    if w.numel() != len(latents):
        raise ValueError(f"{w.numel()} weights for {len(latents)} latents")
    z_k = _values(latents[base_k])
    terms = torch.stack([mse(_values(z), z_k) for z in latents])
    return (w.to(terms.dtype) * terms).sum()


def loss_align_normal(stats, variant: str = "closed_form") -> torch.Tensor:
    """Mean per-element divergence of ``N(mean, exp(logvar))`` from N(0, 1).

    ``closed_form`` is the Gaussian KL ``-0.5 * (1 + logvar - mean^2 - var)``.
    ``paper_literal`` is ``2 log(1/v) + (v^2 + mean^2)/2 - 1/2`` with ``v`` the
    standard deviation; it exceeds the KL by ``log(1/v)`` and is not bounded
    below by zero (its minimum, about -0.193, sits at ``v = sqrt(2)``).
    """
    mean, logvar = stats
    if not torch.all(torch.isfinite(logvar)):
        raise ValueError("log-variance must be finite (variance strictly positive)")
    var = torch.exp(logvar)
    if torch.any(var <= 0):
        raise ValueError("variance must be strictly positive")
    if variant == "closed_form":
        return (-0.5 * (1.0 + logvar - mean**2 - var)).mean()
    if variant == "paper_literal":
        # 2 log(1/v) = -logvar
        return (-logvar + (var + mean**2) / 2.0 - 0.5).mean()
    raise ValueError(f"unknown formula variant {variant!r}")


def alignment_term(latents: Sequence[LatentFeatures], anchor: AnchorSpec, weights: Optional[AdaptiveWeights] = None) -> torch.Tensor:
    if anchor.kind == "none":
        return torch.zeros((), dtype=_values(latents[0]).dtype)
    if anchor.kind == "fixed_modality":
        z_k = latents[anchor.base_k]
        return sum(loss_align_fixed(z, z_k) for j, z in enumerate(latents) if j != anchor.base_k)
    if anchor.kind == "adaptive":
        if weights is None:
            raise AnchorConfigError("adaptive anchor requires AdaptiveWeights")
        return loss_align_adaptive(latents, weights, anchor.base_k)
    if anchor.kind == "standard_normal":
        missing = [lf.modality for lf in latents if lf.gaussian_stats is None]
        if missing:
            raise AnchorConfigError(f"standard_normal anchor needs gaussian_stats (missing for {missing})")
        return sum(loss_align_normal(lf.gaussian_stats, anchor.formula_variant) for lf in latents)
    raise AnchorConfigError(f"unknown anchor kind {anchor.kind!r}")


def teacher_objective(
    latents: Sequence[LatentFeatures],
    anchor: AnchorSpec,
    seg_losses: Sequence[torch.Tensor],
    lambda_align: float = 1.0,
    weights: Optional[AdaptiveWeights] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Total teacher objective and its alignment part.

    ``seg_losses`` holds one segmentation loss per modality, each from the
    predictor applied to that modality's latent.
    """
    if len(seg_losses) != len(latents):
        raise ValueError(f"{len(seg_losses)} segmentation losses for {len(latents)} latents")
    align = alignment_term(latents, anchor, weights)
    seg = torch.stack([torch.as_tensor(s) for s in seg_losses]).sum()
    return seg + lambda_align * align, align


def teacher_loss(latents, anchor: AnchorSpec, seg_losses, lambda_align: float = 1.0, weights=None) -> torch.Tensor:
    return teacher_objective(latents, anchor, seg_losses, lambda_align, weights)[0]


def modality_gap(latent_sets: Sequence) -> float:
    """Mean over modality pairs of the distance between per-modality centroids.

    ``latent_sets[j]`` is an ``(n_j, d)`` collection of flattened latents.
    """
    if len(latent_sets) < 2:
        raise ValueError("need at least two modalities")
    centroids = []
    for j, s in enumerate(latent_sets):
        arr = s.detach().cpu().numpy() if isinstance(s, torch.Tensor) else np.asarray(s, dtype=np.float64)
        if arr.size == 0:
            raise ValueError(f"modality {j} has no latent vectors")
        centroids.append(arr.reshape(arr.shape[0], -1).astype(np.float64).mean(axis=0))
    if len({c.shape for c in centroids}) != 1:
        raise ValueError("latent vectors must share one length")
    dists = [
        np.linalg.norm(centroids[a] - centroids[b])
        for a in range(len(centroids))
        for b in range(a + 1, len(centroids))
    ]
    return float(np.mean(dists))
