"""The desk-scale reference experiment: every anchor's teacher plus single-modality students."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..align import AnchorSpec
from ..data_synth import ModalityMask
from ..distill import DistillConfig
from .config import TrainConfig
from .data import load_dataset
from .evaluation import export_latents, mean_avg_dice, summary_gap, evaluate
from .training import train_student, train_teacher

TEACHER_ANCHORS = ("none", "standard_normal", "fixed_modality", "adaptive")
STUDENT_SOURCES = ("baseline", "none", "adaptive")


@dataclass
class SeedResult:
    seed: int
    final_gap: dict[str, float] = field(default_factory=dict)
    summary_gap: dict[str, float] = field(default_factory=dict)
    weights: list[float] = field(default_factory=list)
    weight_sums: list[float] = field(default_factory=list)
    # source -> per-modality student avg dice (modality order)
    student_dice: dict[str, list[float]] = field(default_factory=dict)
    seconds: float = 0.0


def reference_run(config: TrainConfig, seed: int, out_dir=None) -> SeedResult:
    """Train the four teachers and the baseline/distilled single-modality students for one seed.

    ``fixed_modality`` and ``adaptive`` use ``config.anchor.base_k`` as base
    modality. Students are distilled from the ``none`` and ``adaptive``
    teachers; ``baseline`` students use zero distillation weights.
    """
    start = time.perf_counter()
    cfg = config.with_seed(seed)
    J = cfg.n_modalities
    _, test = load_dataset(cfg)
    out = None if out_dir is None else Path(out_dir) / f"seed{seed}"
    res = SeedResult(seed)
    teachers = {}
    for kind in TEACHER_ANCHORS:
        tcfg = cfg.replace(anchor=AnchorSpec(kind, base_k=cfg.anchor.base_k))
        t = train_teacher(tcfg, out_dir=None if out is None else out / kind)
        teachers[kind] = t
        res.final_gap[kind] = t.log[-1]["modality_gap"]
        rows = export_latents(t, test, None if out is None else out / kind / "latents.csv")
        res.summary_gap[kind] = summary_gap(rows)
        if kind == "adaptive":
            res.weights = t.weights.numpy().tolist()
            res.weight_sums = [float(sum(w)) for w in t.weight_log]
    for source in STUDENT_SOURCES:
        dist = DistillConfig(0.0, 0.0) if source == "baseline" else cfg.distill
        teacher = None if source == "baseline" else teachers[source]
        scores = []
        for j in range(J):
            mask = ModalityMask((j,), J)
            s = train_student(cfg.replace(distill=dist), teacher, mask,
                              out_dir=None if out is None else out / f"student_{source}", name=f"student_{mask.code}")
            report = evaluate(s, test, method=f"student_{source}")
            if out is not None:
                report.write_csv(out / f"student_{source}" / f"report_{mask.code}.csv")
            scores.append(mean_avg_dice(report))
        res.student_dice[source] = scores
    res.seconds = time.perf_counter() - start
    if out is not None:
        (out / "summary.json").write_text(json.dumps(res.__dict__, indent=1, sort_keys=True))
    return res
