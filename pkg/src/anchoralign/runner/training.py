"""Teacher and student training loops with checkpoint/log emission."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..align import AdaptiveWeights, AnchorSpec, modality_gap, teacher_objective
from ..data_synth import ModalityMask
from ..distill import loss_latent_distill, loss_soft_label, student_loss
from ..nets import (
    NetConfig,
    SegmentationModel,
    fuse_latents,
    load_checkpoint,
    load_model_tensors,
    model_tensors,
    save_checkpoint,
)
from ..segmetrics import segmentation_loss
from .config import TrainConfig, from_dict, learning_rate_at, seed_for, to_dict
from .data import epoch_batches, load_dataset, to_tensors

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainedModel:
    model: SegmentationModel
    role: str
    config: TrainConfig
    anchor: AnchorSpec
    weights: Optional[AdaptiveWeights] = None
    mask: Optional[ModalityMask] = None
    steps: int = 0
    log: list[dict] = field(default_factory=list)
    weight_log: list[list[float]] = field(default_factory=list)

    def meta(self) -> dict:
        return {
            "role": self.role,
            "n_modalities": self.model.n_modalities,
            "modalities": list(self.model.modalities),
            "latent_channels": self.model.config.latent_channels,
            "anchor": to_dict(self.anchor),
            "net": to_dict(self.model.config),
            "seed": self.config.seed,
            "steps": self.steps,
            "mask": self.mask.code if self.mask else None,
            "config": to_dict(self.config),
        }

    def tensors(self) -> dict:
        out = model_tensors(self.model, "model.")
        if self.weights is not None:
            out["anchor.theta"] = self.weights.theta
        return out

    def save(self, path) -> Path:
        save_checkpoint(path, self.tensors(), self.meta())
        return Path(path)


def load_trained(path) -> TrainedModel:
    tensors, meta = load_checkpoint(path)
    config = from_dict(TrainConfig, meta["config"])
    anchor = from_dict(AnchorSpec, meta["anchor"])
    model = SegmentationModel(from_dict(NetConfig, meta["net"]), meta["modalities"], meta["n_modalities"])
    load_model_tensors(model, tensors, "model.")
    model.eval()
    weights = None
    if "anchor.theta" in tensors:
        weights = AdaptiveWeights(meta["n_modalities"], tensors["anchor.theta"].tolist())
    mask = ModalityMask.from_code(meta["mask"]) if meta.get("mask") else None
    return TrainedModel(model, meta["role"], config, anchor, weights, mask, meta["steps"])


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _check_finite(value: torch.Tensor, what: str, epoch: int, step: int) -> None:
    if not torch.isfinite(value):
        raise TrainingDiverged(f"{what} became {value.item()} at epoch {epoch}, step {step}")


@torch.no_grad()
def held_out_gap(model: SegmentationModel, samples, modalities) -> float:
    was_training = model.training
    model.eval()
    x, _ = to_tensors(samples)
    sets = [model.encode(x[:, j], j).values.flatten(1) for j in modalities]
    model.train(was_training)
    return modality_gap(sets)


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".10g") if isinstance(v, float) else v) for k, v in r.items()})


def write_weights_csv(path, weight_log: list[list[float]]) -> None:
    rows = [{"epoch": e, **{f"w_{j + 1}": float(w) for j, w in enumerate(ws)}} for e, ws in enumerate(weight_log)]
    _write_csv(path, rows)


def _emit(result: TrainedModel, out_dir, name: str) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / f"{name}.ckpt")
    _write_csv(out / f"{name}_log.csv", result.log)
    if result.weight_log:
        write_weights_csv(out / "weights.csv", result.weight_log)


def train_teacher(config: TrainConfig, out_dir=None, modalities=None, name: str = "teacher") -> TrainedModel:
    """Optimize the teacher objective on complete-modality crops.

    ``modalities`` restricts the teacher to a subset (single-modality
    teachers of the anchor sweep); by default every modality is used.
    """
    config.validate()
    J = config.n_modalities
    modalities = tuple(range(J)) if modalities is None else tuple(modalities)
    anchor = config.anchor
    if len(modalities) < 2 and anchor.kind in ("fixed_modality", "adaptive"):
        anchor = AnchorSpec(kind="none")
    net = replace(config.net, gaussian_heads=anchor.needs_gaussian_stats)
    train, test = load_dataset(config)

    torch.manual_seed(seed_for(config, "teacher:init"))
    model = SegmentationModel(net, modalities, J)
    weights = AdaptiveWeights(len(modalities), anchor.theta) if anchor.kind == "adaptive" else None
    params = list(model.parameters()) + ([weights.theta] if weights is not None else [])
    opt = torch.optim.Adam(params, lr=config.optim.learning_rate)
    gen = torch.Generator().manual_seed(seed_for(config, "teacher:latent_noise"))
    result = TrainedModel(model, "teacher", config, anchor, weights)

    step = 0
    for epoch in range(config.teacher_epochs):
        lr = learning_rate_at(epoch, config.optim)
        _set_lr(opt, lr)
        model.train()
        sums = np.zeros(len(modalities) + 2)
        n_batches = 0
        for x, y in epoch_batches(config, train, epoch, "teacher", config.optim.batch_size):
            latents = [model.encode(x[:, j], j, gen) for j in modalities]
            segs = [segmentation_loss(model.predict_logits(lf), y, config.seg_loss) for lf in latents]
            total, align = teacher_objective(latents, anchor, segs, config.lambda_align, weights)
            _check_finite(total, "teacher loss", epoch, step)
            opt.zero_grad()
            total.backward()
            opt.step()
            step += 1
            n_batches += 1
            sums += np.array([s.item() for s in segs] + [align.item(), total.item()])
        means = sums / max(n_batches, 1)
        row = {"epoch": epoch, "lr": lr}
        row.update({f"seg_loss_{j + 1}": float(means[i]) for i, j in enumerate(modalities)})
        row["align_loss"] = float(means[-2])
        row["total_loss"] = float(means[-1])
        row["modality_gap"] = held_out_gap(model, test, modalities) if len(modalities) > 1 else 0.0
        result.log.append(row)
        if weights is not None:
            w = weights.numpy()
            if abs(w.sum() - len(modalities)) > 1e-6:
                raise RuntimeError(f"adaptive weights left the simplex: sum={w.sum()}")
            result.weight_log.append(w.tolist())
        log.info("teacher epoch %d: %s", epoch, row)
    result.steps = step
    model.eval()
    _emit(result, out_dir, name)
    return result


def freeze(model: torch.nn.Module) -> None:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
        p.grad = None


def distill_targets(teacher: SegmentationModel, x: torch.Tensor, mask: ModalityMask, config: TrainConfig):
    """Teacher latents for the student's modalities and teacher soft labels."""
    with torch.no_grad():
        all_mods = ModalityMask(teacher.modalities, teacher.n_modalities)
        needed = sorted(set(mask.present) | (set(all_mods.present) if config.distill.soft_label_source == "fused" or config.distill.latent_target == "fused" else set()))
        t_lat = {j: teacher.encode(x[:, j], j) for j in needed}
        if config.distill.soft_label_source == "fused":
            fused = fuse_latents([t_lat[j] for j in all_mods.present], all_mods, teacher.config.fusion)
            t_probs = torch.softmax(teacher.predict_logits(fused), 1)
        else:
            fused_present = fuse_latents([t_lat[j] for j in mask.present], mask, teacher.config.fusion)
            t_probs = torch.softmax(teacher.predict_logits(fused_present), 1)
        if config.distill.latent_target == "fused":
            target = fuse_latents([t_lat[j] for j in all_mods.present], all_mods, "mean")
            latent_targets = {j: target for j in mask.present}
        else:
            latent_targets = {j: t_lat[j].values for j in mask.present}
    return latent_targets, t_probs


def train_student(
    config: TrainConfig,
    teacher: Optional[TrainedModel],
    mask: ModalityMask,
    out_dir=None,
    name: str = "student",
) -> TrainedModel:
    """Train a student on the modalities of ``mask`` with the teacher frozen.

    With both distillation weights at zero the teacher is not consulted and
    this is the plain supervised (unimodal) baseline.
    """
    config.validate()
    J = config.n_modalities
    if mask.n_modalities != J or any(j >= J for j in mask.present):
        raise ValueError(f"mask {mask.code} does not fit {J} modalities")
    distill = config.distill
    uses_teacher = bool(distill.latent_weight or distill.soft_label_weight)
    if uses_teacher:
        if teacher is None:
            raise ValueError("distillation weights are nonzero but no teacher was given")
        tmodel = teacher.model
        freeze(tmodel)
        if tmodel.config.latent_channels != config.net.latent_channels:
            raise ValueError("student and teacher latent channels differ")
    train, _ = load_dataset(config)

    torch.manual_seed(seed_for(config, "student:init", *mask.present))
    net = replace(config.net, gaussian_heads=False)
    model = SegmentationModel(net, mask.present, J)
    opt = torch.optim.Adam(model.parameters(), lr=config.optim.learning_rate)
    result = TrainedModel(model, "student", config, teacher.anchor if teacher else AnchorSpec("none"), mask=mask)

    step = 0
    stream = "student:" + mask.code
    for epoch in range(config.student_epochs):
        lr = learning_rate_at(epoch, config.optim)
        _set_lr(opt, lr)
        model.train()
        sums = np.zeros(4)
        n_batches = 0
        for x, y in epoch_batches(config, train, epoch, stream, config.optim.batch_size):
            latents = [model.encode(x[:, j], j) for j in mask.present]
            logits = model.predict_logits(fuse_latents(latents, mask, net.fusion))
            seg = segmentation_loss(logits, y, config.seg_loss)
            latent_term = soft_term = torch.zeros(())
            if uses_teacher:
                targets, t_probs = distill_targets(tmodel, x, mask, config)
                latent_term = torch.stack(
                    [loss_latent_distill(lf, targets[lf.modality], distill.latent_mode) for lf in latents]
                ).mean()
                soft_term = loss_soft_label(torch.softmax(logits, 1), t_probs, distill.temperature)
            total = student_loss(seg, latent_term, soft_term, distill)
            _check_finite(total, "student loss", epoch, step)
            opt.zero_grad()
            total.backward()
            opt.step()
            step += 1
            n_batches += 1
            sums += np.array([seg.item(), latent_term.item(), soft_term.item(), total.item()])
        m = sums / max(n_batches, 1)
        result.log.append({
            "epoch": epoch, "lr": lr, "seg_loss": float(m[0]), "latent_loss": float(m[1]),
            "soft_loss": float(m[2]), "total_loss": float(m[3]),
        })
        log.info("student %s epoch %d: %s", mask.code, epoch, result.log[-1])
    result.steps = step
    model.eval()
    _emit(result, out_dir, name)
    return result
