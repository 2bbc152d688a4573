"""Student objective: supervised segmentation plus distillation from a frozen teacher."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .nets import LatentFeatures

PROB_EPS = 1e-8


@dataclass
class DistillConfig:
    latent_weight: float = 1.0
    soft_label_weight: float = 1.0
    temperature: float = 1.0
    latent_mode: str = "mse"
    # "fused": teacher prediction from all modalities; "same_modality": from Z_j* only
    soft_label_source: str = "fused"
    # "same_modality": match the teacher latent of the student's own modality
    latent_target: str = "same_modality"

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        for name in ("latent_weight", "soft_label_weight"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.latent_mode not in ("mse", "gaussian_moment_kl"):
            raise ValueError(f"unknown latent_mode {self.latent_mode!r}")
        if self.soft_label_source not in ("fused", "same_modality"):
            raise ValueError(f"unknown soft_label_source {self.soft_label_source!r}")
        if self.latent_target not in ("same_modality", "fused"):
            raise ValueError(f"unknown latent_target {self.latent_target!r}")


def _values(z):
    return z.values if isinstance(z, LatentFeatures) else z


def channel_moments(z: torch.Tensor, eps: float = 1e-8) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel mean and variance over batch and spatial axes of ``(B, C, ...)``."""
    dims = (0,) + tuple(range(2, z.ndim))
    return z.mean(dims), z.var(dims, unbiased=False) + eps


def loss_latent_distill(z_student, z_teacher, mode: str = "mse") -> torch.Tensor:
    """Match student latents to (detached) teacher latents.

    ``gaussian_moment_kl`` fits a diagonal Gaussian per channel to each side's
    batch statistics and returns the channel-mean of KL(student || teacher).
    """
    s = _values(z_student)
    t = _values(z_teacher).detach()
    if s.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(s.shape)} vs {tuple(t.shape)}")
    if mode == "mse":
        return ((s - t) ** 2).mean()
    if mode == "gaussian_moment_kl":
        if s.shape[0] < 2:
            raise ValueError("gaussian_moment_kl needs a batch of at least two samples")
        ms, vs = channel_moments(s)
        mt, vt = channel_moments(t)
        kl = 0.5 * (torch.log(vt / vs) + (vs + (ms - mt) ** 2) / vt - 1.0)
        return kl.mean()
    raise ValueError(f"unknown latent distillation mode {mode!r}")


def _check_probs(p: torch.Tensor, name: str) -> None:
    if torch.any(p < 0) or torch.any(p > 1):
        raise ValueError(f"{name} has probabilities outside [0, 1]")
    if torch.any((p.sum(1) - 1).abs() > 1e-4):
        raise ValueError(f"{name} is not normalized over the class axis")


def soften(p: torch.Tensor, temperature: float) -> torch.Tensor:
    logp = torch.log(p.clamp_min(PROB_EPS))
    return torch.softmax(logp / temperature, dim=1)


def loss_soft_label(student_probs: torch.Tensor, teacher_probs: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Voxel-mean KL(teacher || student) of temperature-softened class distributions, times T^2."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    teacher_probs = teacher_probs.detach()
    _check_probs(student_probs, "student_probs")
    _check_probs(teacher_probs, "teacher_probs")
    if temperature != 1.0:
        student_probs = soften(student_probs, temperature)
        teacher_probs = soften(teacher_probs, temperature)
    t = teacher_probs.clamp_min(PROB_EPS)
    s = student_probs.clamp_min(PROB_EPS)
    kl = (t * (torch.log(t) - torch.log(s))).sum(1)
    return kl.mean() * temperature**2


def student_loss(seg_loss: torch.Tensor, latent_term, soft_term, config: DistillConfig) -> torch.Tensor:
    """``seg + latent_weight * latent + soft_label_weight * soft``; zero weights skip the term."""
    total = seg_loss
    if config.latent_weight:
        total = total + config.latent_weight * latent_term
    if config.soft_label_weight:
        total = total + config.soft_label_weight * soft_term
    return total
