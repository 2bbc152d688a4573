"""Mask-sweep evaluation, latent export, slice images and the anchor sweep."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..align import modality_gap
from ..data_synth import (
    BACKGROUND,
    CORE,
    EDEMA,
    ENHANCING,
    ModalityMask,
    MultiModalSample,
    enumerate_modality_masks,
)
from ..segmetrics import DiceReport, aggregate_row, region_dices
from .config import TrainConfig
from .data import load_dataset
from .training import TrainedModel, train_teacher

Predictor = Callable[[MultiModalSample, ModalityMask], np.ndarray]

LABEL_COLORS = {
    BACKGROUND: (0, 0, 0),
    EDEMA: (0, 255, 0),
    CORE: (255, 255, 0),
    ENHANCING: (255, 0, 0),
}


def model_predictor(model, source_modality: Optional[int] = None) -> Predictor:
    """Argmax label predictor for a trained model.

    ``source_modality`` routes every present modality through that one
    encoder (cross-modality evaluation of single-modality teachers).
    """

    @torch.no_grad()
    def predict(sample: MultiModalSample, mask: ModalityMask) -> np.ndarray:
        model.eval()
        x = torch.from_numpy(sample.stacked()[None].astype(np.float32))
        if source_modality is None:
            logits = model(x, mask)
        else:
            from ..nets import fuse_latents

            lats = []
            for j in mask.present:
                lf = model.encode(x[:, j], source_modality)
                lf.modality = j
                lats.append(lf)
            logits = model.predict_logits(fuse_latents(lats, mask, model.config.fusion))
        return logits.argmax(1)[0].numpy().astype(np.uint8)

    return predict


def evaluate_predictor(
    predict: Predictor,
    samples: Sequence[MultiModalSample],
    masks: Sequence[ModalityMask],
    method: str = "model",
    anchor: str = "none",
) -> DiceReport:
    """Per-case WT/TC/EC dice averaged over cases, one row per mask (scale 0-100)."""
    report = DiceReport()
    for mask in masks:
        dices = np.array([region_dices(predict(s, mask), s.labels) for s in samples])
        wt, tc, ec = 100.0 * dices.mean(axis=0)
        report.rows.append(aggregate_row(wt, tc, ec, method, mask.code, anchor))
    return report


def evaluate(trained: TrainedModel, samples, masks: Optional[Sequence[ModalityMask]] = None, method: Optional[str] = None) -> DiceReport:
    """Evaluate a checkpoint; teachers default to all masks, students to their own."""
    J = trained.model.n_modalities
    if masks is None:
        masks = enumerate_modality_masks(J) if trained.role == "teacher" else [trained.mask]
    have = set(trained.model.modalities)
    for m in masks:
        if not set(m.present) <= have:
            raise ValueError(f"mask {m.code} needs modalities the model lacks ({sorted(have)})")
    return evaluate_predictor(model_predictor(trained.model), samples, masks, method or trained.role, trained.anchor.kind)


def mean_avg_dice(report: DiceReport) -> float:
    return float(np.mean([float(r.avg) for r in report.rows]))


# --- latent export ------------------------------------------------------------


def pca_2d(x: np.ndarray) -> np.ndarray:
    """Project rows onto the top-2 principal axes; component signs are fixed."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValueError("PCA needs at least three rows")
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = np.zeros((2, x.shape[1]))
    k = min(2, vt.shape[0])
    comps[:k] = vt[:k]
    for c in comps:
        i = np.argmax(np.abs(c))
        if c[i] < 0:
            c *= -1
    return xc @ comps.T


@torch.no_grad()
def latent_rows(trained: TrainedModel, samples) -> list[dict]:
    model = trained.model
    model.eval()
    rows = []
    for s in samples:
        x = torch.from_numpy(s.stacked()[None].astype(np.float32))
        for j in model.modalities:
            z = model.encode(x[:, j], j).values[0]
            rows.append({"sample_id": s.sample_id, "modality": j, "summary": z.flatten(1).mean(1).double().numpy()})
    return rows


def export_latents(trained: TrainedModel, samples, out_path=None) -> list[dict]:
    """Channel-mean latent summaries per (sample, modality) plus 2-D PCA coordinates."""
    rows = latent_rows(trained, samples)
    if len(rows) < 3:
        raise ValueError("latent export needs at least three (sample, modality) rows for PCA")
    coords = pca_2d(np.stack([r["summary"] for r in rows]))
    for r, (a, b) in zip(rows, coords):
        r["pc1"], r["pc2"] = float(a), float(b)
    if out_path is not None:
        C = len(rows[0]["summary"])
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "modality"] + [f"z_{c}" for c in range(C)] + ["pc1", "pc2"])
            for r in rows:
                w.writerow([r["sample_id"], r["modality"]] + [format(v, ".10g") for v in r["summary"]]
                           + [format(r["pc1"], ".10g"), format(r["pc2"], ".10g")])
    return rows


def summary_gap(rows: list[dict]) -> float:
    """Modality gap computed on exported channel-mean summaries."""
    mods = sorted({r["modality"] for r in rows})
    return modality_gap([np.stack([r["summary"] for r in rows if r["modality"] == j]) for j in mods])


# --- slice images -------------------------------------------------------------


def _ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def intensity_to_rgb(slice2d: np.ndarray) -> np.ndarray:
    g = np.clip(np.rint((np.asarray(slice2d, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=-1)


def labels_to_rgb(slice2d: np.ndarray) -> np.ndarray:
    out = np.zeros(slice2d.shape + (3,), dtype=np.uint8)
    for cls, color in LABEL_COLORS.items():
        out[slice2d == cls] = color
    return out


def take_slice(volume: np.ndarray, axis: int, index: int) -> np.ndarray:
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    if not 0 <= index < volume.shape[axis]:
        raise ValueError(f"slice index {index} outside [0, {volume.shape[axis]}) on axis {axis}")
    return np.take(volume, index, axis=axis)


def export_slices(
    trained: Optional[TrainedModel],
    sample: MultiModalSample,
    axis: int,
    index: int,
    out_dir,
    prefix: Optional[str] = None,
    prediction: Optional[np.ndarray] = None,
) -> list[Path]:
    """Write PPM images: one per modality, the predicted labels and the ground truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = prefix or f"{sample.sample_id}_ax{axis}_{index}"
    gt = take_slice(sample.labels, axis, index)
    if prediction is None:
        if trained is None:
            raise ValueError("need a model or an explicit prediction")
        mask = ModalityMask(trained.model.modalities, trained.model.n_modalities)
        prediction = model_predictor(trained.model)(sample, mask)
    paths = []
    for j, v in enumerate(sample.volumes):
        p = out / f"{prefix}_mod{j}.ppm"
        p.write_bytes(_ppm(intensity_to_rgb(take_slice(v, axis, index))))
        paths.append(p)
    for tag, lab in (("pred", take_slice(prediction, axis, index)), ("gt", gt)):
        p = out / f"{prefix}_{tag}.ppm"
        p.write_bytes(_ppm(labels_to_rgb(lab)))
        paths.append(p)
    return paths


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


# --- anchor sweep -------------------------------------------------------------


def sweep_anchor(config: TrainConfig, out_dir=None) -> dict:
    """Train one teacher per single modality; score each on every target modality.

    Returns the dice matrix (rows: trained modality, columns: target
    modality), per-row averages and the index of the best base modality.
    """
    J = config.n_modalities
    _, test = load_dataset(config)
    matrix = np.zeros((J, J))
    for k in range(J):
        teacher = train_teacher(config, modalities=(k,), name=f"single_mod{k}",
                                out_dir=None if out_dir is None else Path(out_dir) / f"mod{k}")
        for j in range(J):
            report = evaluate_predictor(model_predictor(teacher.model, source_modality=k), test,
                                        [ModalityMask((j,), J)], f"single_mod{k}", "none")
            matrix[k, j] = float(report.rows[0].avg)
    averages = matrix.mean(axis=1)
    best = int(np.argmax(averages))
    if out_dir is not None:
        with open(Path(out_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trained_modality"] + [f"target_{j}" for j in range(J)] + ["average"])
            for k in range(J):
                w.writerow([k] + [f"{v:.2f}" for v in matrix[k]] + [f"{averages[k]:.2f}"])
    return {"matrix": matrix, "averages": averages, "best_k": best}
