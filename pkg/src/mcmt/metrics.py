"""Retrieval evaluation: "Rank@1, IoU=m" and mean IoU, both as percentages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .intervals import Moment, iou


def _check_pairs(preds: Sequence[Moment], gts: Sequence[Moment]) -> None:
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if len(preds) == 0:
        raise ValueError("cannot evaluate an empty prediction list")


def rank1_at_iou(preds: Sequence[Moment], gts: Sequence[Moment], m: float) -> float:
    """Percentage of queries whose prediction overlaps ground truth with
    IoU strictly greater than ``m``."""
    if not (0.0 < m < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {m}")
    _check_pairs(preds, gts)
    hits = sum(1 for p, g in zip(preds, gts) if iou(p, g) > m)
    return 100.0 * hits / len(preds)


def mean_iou(preds: Sequence[Moment], gts: Sequence[Moment]) -> float:
    """Average per-query IoU, as a percentage."""
    _check_pairs(preds, gts)
    return 100.0 * sum(iou(p, g) for p, g in zip(preds, gts)) / len(preds)


@dataclass(frozen=True)
class EvalReport:
    thresholds: tuple[float, ...]
    rank1: tuple[float, ...]
    miou: float
    n_queries: int


def evaluate(preds: Sequence[Moment], gts: Sequence[Moment],
             thresholds: Sequence[float]) -> EvalReport:
    return EvalReport(
        thresholds=tuple(thresholds),
        rank1=tuple(rank1_at_iou(preds, gts, m) for m in thresholds),
        miou=mean_iou(preds, gts),
        n_queries=len(preds),
    )


def format_report(report: EvalReport, label: str = "eval") -> str:
    """Columnar text report: one Rank@1 column per threshold plus mIoU."""
    headers = [f"IoU={m:g}" for m in report.thresholds] + ["mIoU"]
    values = [f"{v:.2f}" for v in report.rank1] + [f"{report.miou:.2f}"]
    width = max(8, max(len(h) for h in headers) + 2)
    lines = [
        f"Rank@1 (%) over {report.n_queries} queries [{label}]",
        "".join(h.rjust(width) for h in headers),
        "".join(v.rjust(width) for v in values),
    ]
    return "\n".join(lines)
