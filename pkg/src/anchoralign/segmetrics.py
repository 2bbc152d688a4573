"""Tumor-region masks, dice scoring, segmentation losses and dice reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

N_CLASSES = 4
SOFT_DICE_EPS = 1e-5
REPORT_COLUMNS = ("method", "mask", "anchor", "wt", "tc", "ec", "avg", "imp")


@dataclass
class RegionMasks:
    wt: np.ndarray
    tc: np.ndarray
    ec: np.ndarray

    def as_tuple(self):
        return self.wt, self.tc, self.ec


def derive_regions(labels: np.ndarray) -> RegionMasks:
    """Whole tumor = {1,2,3}, tumor core = {2,3}, enhancing core = {3}."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 3):
        raise ValueError(f"labels must lie in {{0,1,2,3}}, found range [{labels.min()}, {labels.max()}]")
    return RegionMasks(wt=labels >= 1, tc=labels >= 2, ec=labels == 3)


def dice_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """Binary dice; two empty masks score 1.0."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    denom = int(pred.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / denom


def region_dices(pred_labels: np.ndarray, gt_labels: np.ndarray) -> tuple[float, float, float]:
    p, g = derive_regions(pred_labels), derive_regions(gt_labels)
    return tuple(dice_score(a, b) for a, b in zip(p.as_tuple(), g.as_tuple()))


def one_hot(labels: torch.Tensor, n_classes: int = N_CLASSES) -> torch.Tensor:
    """``(B, D, H, W)`` integer labels to ``(B, C, D, H, W)`` float one-hot."""
    return F.one_hot(labels.long(), n_classes).movedim(-1, 1).to(torch.get_default_dtype())


def soft_dice_loss(probs: torch.Tensor, gt: torch.Tensor, eps: float = SOFT_DICE_EPS) -> torch.Tensor:
    """``1 - mean`` soft dice over the foreground classes.

    ``probs`` and ``gt`` are ``(B, C, ...)``; sums pool batch and voxels.
    """
    if probs.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(gt.shape)}")
    dims = (0,) + tuple(range(2, probs.ndim))
    gt = gt.to(probs.dtype)
    inter = (probs * gt).sum(dims)
    denom = probs.sum(dims) + gt.sum(dims)
    dice = (2.0 * inter + eps) / (denom + eps)
    return 1.0 - dice[1:].mean()


def cross_entropy_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels.long())


def segmentation_loss(logits: torch.Tensor, labels: torch.Tensor, kind: str = "dice_ce") -> torch.Tensor:
    """Default training loss: soft dice plus cross-entropy."""
    if kind == "ce":
        return cross_entropy_loss(logits, labels)
    probs = torch.softmax(logits, dim=1)
    dice = soft_dice_loss(probs, one_hot(labels, logits.shape[1]).to(probs.dtype))
    if kind == "dice":
        return dice
    if kind == "dice_ce":
        return dice + cross_entropy_loss(logits, labels)
    raise ValueError(f"unknown segmentation loss {kind!r}")


# --- reporting ----------------------------------------------------------------


def round_half_up(value, places: int = 2) -> Decimal:
    quantum = Decimal(1).scaleb(-places)
    return Decimal(str(value)).quantize(quantum, rounding=ROUND_HALF_UP)


@dataclass
class ReportRow:
    method: str
    mask: str
    anchor: str
    wt: Decimal
    tc: Decimal
    ec: Decimal
    avg: Decimal
    imp: Optional[Decimal] = None

    def cells(self) -> list[str]:
        return [
            self.method,
            self.mask,
            self.anchor,
            f"{self.wt:.2f}",
            f"{self.tc:.2f}",
            f"{self.ec:.2f}",
            f"{self.avg:.2f}",
            "" if self.imp is None else f"{self.imp:.2f}",
        ]


@dataclass
class DiceReport:
    rows: list[ReportRow] = field(default_factory=list)

    def row(self, method: str, mask: str, anchor: str) -> ReportRow:
        for r in self.rows:
            if (r.method, r.mask, r.anchor) == (method, mask, anchor):
                return r
        raise KeyError((method, mask, anchor))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "DiceReport":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report header {reader.fieldnames}")
        rows = [
            ReportRow(
                r["method"], r["mask"], r["anchor"],
                Decimal(r["wt"]), Decimal(r["tc"]), Decimal(r["ec"]), Decimal(r["avg"]),
                Decimal(r["imp"]) if r["imp"] else None,
            )
            for r in reader
        ]
        return cls(rows)


def aggregate_row(wt, tc, ec, method: str = "", mask: str = "", anchor: str = "") -> ReportRow:
    """Round each region to two decimals, then average the rounded values."""
    for name, v in (("wt", wt), ("tc", tc), ("ec", ec)):
        if v is None:
            raise ValueError(f"missing region dice {name!r}")
    parts = [round_half_up(v) for v in (wt, tc, ec)]
    avg = round_half_up(sum(parts) / 3)
    return ReportRow(method, mask, anchor, *parts, avg)


def aggregate_report(entries: Iterable) -> DiceReport:
    """Build a report from entries.

    Each entry is either ``(wt, tc, ec)`` or a mapping with keys ``wt``, ``tc``,
    ``ec`` and optionally ``method``, ``mask``, ``anchor``.
    """
    rows = []
    for e in entries:
        if isinstance(e, dict):
            missing = [k for k in ("wt", "tc", "ec") if k not in e]
            if missing:
                raise ValueError(f"entry missing regions {missing}")
            rows.append(aggregate_row(e["wt"], e["tc"], e["ec"], e.get("method", ""), e.get("mask", ""), e.get("anchor", "")))
        else:
            if len(e) != 3:
                raise ValueError(f"entry needs exactly three region dices, got {e!r}")
            rows.append(aggregate_row(*e))
    return DiceReport(rows)


def improvement(avg_new, avg_baseline) -> Decimal:
    return round_half_up(Decimal(str(avg_new)) - Decimal(str(avg_baseline)))


def average_improvement(deltas: Sequence) -> Decimal:
    if len(deltas) == 0:
        raise ValueError("average of an empty list of improvements")
    total = sum(Decimal(str(d)) for d in deltas)
    return total / len(deltas)


def attach_improvements(report: DiceReport, baseline: DiceReport) -> DiceReport:
    """Fill ``imp`` for rows whose mask appears in ``baseline``."""
    by_mask = {r.mask: r.avg for r in baseline.rows}
    for r in report.rows:
        if r.mask in by_mask:
            r.imp = improvement(r.avg, by_mask[r.mask])
    return report
