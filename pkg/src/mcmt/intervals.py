"""Core interval types and pure 1-D temporal math.

Moments live in seconds, proposals in normalized [0, 1] video time.  All
types here are immutable value objects and every operation is pure, so they
are safe to share across threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class Moment:
    """A temporal segment in seconds, ``0 <= start <= end``."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.start <= self.end):
            raise ValueError(f"invalid Moment: start={self.start}, end={self.end}")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Proposal:
    """A candidate segment parameterized by normalized (center, width).

    ``score`` is the proposal's reliability (the aggregation attention
    weight); it is ``None`` until an aggregation pass assigns one.
    """

    center: float
    width: float
    score: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.center <= 1.0):
            raise ValueError(f"proposal center {self.center} outside [0, 1]")
        if not (0.0 < self.width <= 1.0):
            raise ValueError(f"proposal width {self.width} outside (0, 1]")


@dataclass(frozen=True)
class ProposalSet:
    """An ordered, non-empty collection of proposals for one query."""

    proposals: tuple[Proposal, ...]

    def __post_init__(self) -> None:
        if len(self.proposals) == 0:
            raise ValueError("ProposalSet needs at least one proposal")

    def __len__(self) -> int:
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)

    def __getitem__(self, i: int) -> Proposal:
        return self.proposals[i]

    @property
    def scores(self) -> list[float | None]:
        return [p.score for p in self.proposals]


@dataclass(frozen=True)
class MaskTriplet:
    """Positive / easy-negative / hard-negative clip-weight vectors.

    Invariants: ``easy == 1 - positive`` elementwise and ``hard == 1``
    everywhere.  Tensors are kept (not copied) so gradients flow from the
    easy mask back into the positive one.
    """

    positive: torch.Tensor
    easy: torch.Tensor
    hard: torch.Tensor

    def __post_init__(self) -> None:
        if self.positive.shape != self.easy.shape or self.positive.shape != self.hard.shape:
            raise ValueError("mask triplet shapes disagree")
        with torch.no_grad():
            if self.positive.min() < 0.0 or self.positive.max() > 1.0:
                raise ValueError("positive mask entries outside [0, 1]")
            if not torch.equal(self.hard, torch.ones_like(self.hard)):
                raise ValueError("hard mask must be all-ones")


def iou(a: Moment, b: Moment) -> float:
    """Intersection-over-union of two moments.

    Zero-length unions only arise when both moments are the same point;
    that case is defined as IoU 1.  Any other degenerate overlap is 0.
    """
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter < 0.0:
        inter = 0.0
    union = a.length + b.length - inter
    if union <= 0.0:
        return 1.0 if (a.start == b.start and a.end == b.end) else 0.0
    return inter / union


def iou_span(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    """IoU on raw (start, end) pairs, same conventions as :func:`iou`."""
    return iou(Moment(a_start, a_end), Moment(b_start, b_end))


def proposal_to_moment(p: Proposal, duration: float) -> Moment:
    """Convert a normalized proposal to a second-level moment.

    Boundaries are clamped to the video: start = max(c - w/2, 0) * d and
    end = min(c + w/2, 1) * d.
    """
    if duration <= 0.0:
        raise ValueError(f"duration must be positive, got {duration}")
    start = max(p.center - p.width / 2.0, 0.0) * duration
    end = min(p.center + p.width / 2.0, 1.0) * duration
    return Moment(start, end)
