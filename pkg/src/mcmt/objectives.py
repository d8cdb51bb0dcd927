"""Reconstruction cross-entropy and intra-video contrastive losses.

Six CE terms exist (forward/inverse x positive/easy/hard).  The easy terms
are excluded from the reconstruction loss (the easy mask hides exactly the
query-related clips, so asking the reconstructor to fit them would be
counterproductive) but participate in the margin hinges, which order the
terms positive < hard < easy with margins (beta1, beta2) forward and
(beta3, beta4) inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBundle:
    """One training step's scalar losses (batch means)."""

    ce_f_pos: float
    ce_i_pos: float
    ce_f_hard: float
    ce_i_hard: float
    ce_f_easy: float
    ce_i_easy: float
    l_rec: float
    l_ivc_f: float
    l_ivc_i: float
    l_ivc: float
    beta1: float = 0.1
    beta2: float = 0.15
    beta3: float = 0.1
    beta4: float = 0.15

    def __post_init__(self) -> None:
        ce_terms = (self.ce_f_pos, self.ce_i_pos, self.ce_f_hard,
                    self.ce_i_hard, self.ce_f_easy, self.ce_i_easy)
        if any(c < 0 for c in ce_terms):
            raise ValueError("cross-entropy terms must be non-negative")
        if self.l_ivc_f < 0 or self.l_ivc_i < 0:
            raise ValueError("hinge losses must be non-negative")
        expected = self.ce_f_pos + self.ce_i_pos + self.ce_f_hard + self.ce_i_hard
        if not math.isclose(self.l_rec, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(
                f"l_rec={self.l_rec} must equal the four retained CE terms ({expected})"
            )
        if min(self.beta1, self.beta2, self.beta3, self.beta4) < 0:
            raise ValueError("margins must be non-negative")
        if not (self.beta1 < self.beta2) or not (self.beta3 < self.beta4):
            raise ValueError("margins must satisfy beta1 < beta2 and beta3 < beta4")

    def as_dict(self) -> dict[str, float]:
        return {
            "ce_f_pos": self.ce_f_pos,
            "ce_i_pos": self.ce_i_pos,
            "ce_f_hard": self.ce_f_hard,
            "ce_i_hard": self.ce_i_hard,
            "ce_f_easy": self.ce_f_easy,
            "ce_i_easy": self.ce_i_easy,
            "l_rec": self.l_rec,
            "l_ivc_f": self.l_ivc_f,
            "l_ivc_i": self.l_ivc_i,
            "l_ivc": self.l_ivc,
        }


def sequence_ce(dist: torch.Tensor, target_ids: torch.Tensor,
                valid: torch.Tensor) -> torch.Tensor:
    """Per-sequence cross-entropy, summed over valid positions.

    dist: (B, n_q, n_vocab) per-position probabilities; target_ids:
    (B, n_q); valid: (B, n_q) bool.  Returns (B,).  Probabilities are
    floored at 1e-12 before the log so the loss stays finite.
    """
    picked = dist.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)  # (B, n_q)
    logp = torch.log(picked.clamp(min=PROB_FLOOR))
    return -(logp * valid.to(logp.dtype)).sum(dim=-1)


def reconstruction_ce(dist: torch.Tensor, target) -> float:
    """Single-example CE against a MaskedQuery's targets.

    dist: (n_q, n_vocab) probability rows (each summing to 1).
    """
    ids = torch.as_tensor(target.target_ids, dtype=torch.long)
    valid = torch.zeros(ids.shape[0], dtype=torch.bool)
    valid[: target.valid_len] = True
    return float(sequence_ce(dist.unsqueeze(0), ids.unsqueeze(0), valid.unsqueeze(0))[0])


def rec_loss(ce_f_pos, ce_i_pos, ce_f_hard, ce_i_hard):
    """Reconstruction loss: the four retained CE terms, easy terms excluded."""
    for name, value in (("ce_f_pos", ce_f_pos), ("ce_i_pos", ce_i_pos),
                        ("ce_f_hard", ce_f_hard), ("ce_i_hard", ce_i_hard)):
        low = float(value.detach().min()) if isinstance(value, torch.Tensor) else float(value)
        if low < 0:
            raise ValueError(f"{name} is negative; CE terms must be >= 0")
    return ce_f_pos + ce_i_pos + ce_f_hard + ce_i_hard


def _hinge_pair(ce_p, ce_h, ce_e, margin_hard: float, margin_easy: float):
    if any(isinstance(x, torch.Tensor) for x in (ce_p, ce_h, ce_e)):
        term_h = torch.clamp(ce_p - ce_h + margin_hard, min=0.0)
        term_e = torch.clamp(ce_p - ce_e + margin_easy, min=0.0)
        return term_h + term_e
    return max(ce_p - ce_h + margin_hard, 0.0) + max(ce_p - ce_e + margin_easy, 0.0)


def ivc_forward(ce_p, ce_h, ce_e, beta1: float, beta2: float):
    """Forward hinge: positive CE must undercut hard by beta1, easy by beta2."""
    if not beta1 < beta2:
        raise ValueError(f"margins must satisfy beta1 < beta2, got {beta1}, {beta2}")
    return _hinge_pair(ce_p, ce_h, ce_e, beta1, beta2)


def ivc_inverse(ce_p, ce_h, ce_e, beta3: float, beta4: float):
    """Inverse-stream hinge with margins beta3 < beta4."""
    if not beta3 < beta4:
        raise ValueError(f"margins must satisfy beta3 < beta4, got {beta3}, {beta4}")
    return _hinge_pair(ce_p, ce_h, ce_e, beta3, beta4)


def ivc_total(l_f, l_i):
    """Total contrastive loss: forward plus inverse hinge terms."""
    return l_f + l_i
