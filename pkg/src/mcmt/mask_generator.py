"""Positive-mask generation: cross-modal fusion, proposal heads, Gaussian
masks, attention-based mask aggregation, and in-video negative mining.

The flow per (video, query) pair:

  fused = decoder(video, encoder(query))            for forward and
  fused_inv = decoder(video, encoder(reversed q))   inverse query streams
  (centers, widths) = proposal head on the two summary vectors
  masks[i][j] = exp(-alpha * ((j+1)/n_v - c_i)^2 / w_i^2)
  positive = sum_i softmax(W_m . mask_i)_i * mask_i
  easy = 1 - positive, hard = all-ones
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .intervals import MaskTriplet, Proposal, ProposalSet
from .transformer import Decoder, Encoder, init_linear

CONCAT = "concat"
ATTENTION = "attention"
FUSION_MODES = (CONCAT, ATTENTION)

WIDTH_FLOOR = 1e-3


def _positions(n: int, d_model: int) -> nn.Parameter:
    bound = 1.0 / math.sqrt(d_model)
    return nn.Parameter(torch.empty(n, d_model).uniform_(-bound, bound))


class FusionModule(nn.Module):
    """Query encoder + video decoder producing the fused sequence.

    The output has one position per clip; the last position serves as the
    sequence summary that the proposal head consumes.
    """

    def __init__(self, d_v: int, d_w: int, d_h: int, n_v: int, n_q: int,
                 n_layers: int = 3, n_heads: int = 4):
        super().__init__()
        self.d_h = d_h
        self.n_v = n_v
        self.n_q = n_q
        self.video_proj = nn.Linear(d_v, d_h)
        self.query_proj = nn.Linear(d_w, d_h)
        init_linear(self.video_proj)
        init_linear(self.query_proj)
        self.pos_video = _positions(n_v, d_h)
        self.pos_query = _positions(n_q, d_h)
        self.encoder = Encoder(d_h, n_heads, n_layers)
        self.decoder = Decoder(d_h, n_heads, n_layers)
        self.double()

    def forward(self, video: torch.Tensor, query_emb: torch.Tensor,
                query_padding: torch.Tensor) -> torch.Tensor:
        """video: (B, n_v, d_v); query_emb: (B, n_q, d_w);
        query_padding: (B, n_q) bool, True at PAD positions.
        Returns the fused sequence (B, n_v, d_h)."""
        q = self.query_proj(query_emb) + self.pos_query
        memory = self.encoder(q, key_padding=query_padding)
        v = self.video_proj(video) + self.pos_video
        fused = self.decoder(v, memory, memory_key_padding=query_padding)
        if not torch.isfinite(fused).all():
            raise RuntimeError("non-finite activations in cross-modal fusion")
        return fused

    def summary(self, fused: torch.Tensor) -> torch.Tensor:
        """Last decoder position, (B, d_h)."""
        return fused[:, -1, :]


class ProposalHead(nn.Module):
    """Predicts k (center, width) pairs from the two stream summaries.

    ``concat`` mode projects the concatenated summaries; ``attention`` mode
    first blends them with a 2-way additive-attention weighting and
    projects the blend.  Widths are scaled by ``width_cap`` and floored at
    ``WIDTH_FLOOR`` so the Gaussian denominator never degenerates.
    """

    def __init__(self, d_h: int, k: int, mode: str = ATTENTION, width_cap: float = 1.0):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}")
        if not (0.0 < width_cap <= 1.0):
            raise ValueError(f"width_cap must lie in (0, 1], got {width_cap}")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.mode = mode
        self.k = k
        self.width_cap = width_cap
        if mode == CONCAT:
            self.proj = nn.Linear(2 * d_h, 2 * k, bias=False)
        else:
            self.proj = nn.Linear(d_h, 2 * k, bias=False)
            self.score = nn.Linear(d_h, 1, bias=False)
            init_linear(self.score)
        init_linear(self.proj)
        self.double()

    def forward(self, h_f: torch.Tensor, h_i: torch.Tensor):
        """h_f, h_i: (B, d_h) forward/inverse summaries.
        Returns centers (B, k), widths (B, k), fusion weights (B, 2) or None."""
        fusion_beta = None
        if self.mode == CONCAT:
            raw = self.proj(torch.cat([h_f, h_i], dim=-1))
        else:
            stacked = torch.stack([h_f, h_i], dim=1)  # (B, 2, d_h)
            fusion_beta = torch.softmax(self.score(stacked).squeeze(-1), dim=1)  # (B, 2)
            blended = (fusion_beta.unsqueeze(-1) * stacked).sum(dim=1)
            raw = self.proj(blended)
        out = torch.sigmoid(raw)
        centers, widths = out[:, : self.k], out[:, self.k :]
        widths = (widths * self.width_cap).clamp(min=WIDTH_FLOOR)
        return centers, widths, fusion_beta


def gaussian_masks(centers: torch.Tensor, widths: torch.Tensor, n_v: int,
                   alpha: float) -> torch.Tensor:
    """Evaluate exp(-alpha * ((j+1)/n_v - c)^2 / w^2) on the clip grid.

    centers, widths: (..., k).  Returns (..., k, n_v) with entries in (0, 1].
    The exponent is floored at -700 so narrow masks cannot underflow to an
    exact zero in float64 (the true value there is below 1e-300 anyway).
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if bool((widths <= 0).any()):
        raise ValueError("proposal widths must be positive")
    grid = torch.arange(1, n_v + 1, dtype=centers.dtype, device=centers.device) / n_v
    delta = grid - centers.unsqueeze(-1)  # (..., k, n_v)
    exponent = -alpha * delta.pow(2) / widths.unsqueeze(-1).pow(2)
    return torch.exp(exponent.clamp(min=-700.0))


def build_gaussian_masks(proposals: ProposalSet, n_v: int, alpha: float) -> torch.Tensor:
    """ProposalSet convenience wrapper; returns the (k, n_v) mask matrix."""
    centers = torch.tensor([p.center for p in proposals], dtype=torch.float64)
    widths = torch.tensor([p.width for p in proposals], dtype=torch.float64)
    return gaussian_masks(centers, widths, n_v, alpha)


class MaskAggregator(nn.Module):
    """Attention-weighted combination of the k masks into one positive mask."""

    def __init__(self, n_v: int):
        super().__init__()
        self.score = nn.Linear(n_v, 1, bias=False)
        init_linear(self.score)
        self.double()

    def forward(self, masks: torch.Tensor):
        """masks: (B, k, n_v).  Returns positive (B, n_v), beta (B, k)."""
        beta = torch.softmax(self.score(masks).squeeze(-1), dim=-1)  # (B, k)
        positive = (beta.unsqueeze(-1) * masks).sum(dim=1)
        return positive, beta


def aggregate_masks(masks: torch.Tensor, aggregator: MaskAggregator):
    """Single-example wrapper over (k, n_v) masks -> ((n_v,), (k,))."""
    positive, beta = aggregator(masks.unsqueeze(0))
    return positive.squeeze(0), beta.squeeze(0)


def mine_negatives(positive: torch.Tensor) -> MaskTriplet:
    """Easy negative = complement of the positive mask; hard = whole video."""
    if bool((positive < 0).any()) or bool((positive > 1).any()):
        raise ValueError("positive mask entries must lie in [0, 1]")
    return MaskTriplet(positive=positive, easy=1.0 - positive, hard=torch.ones_like(positive))


@dataclass
class GeneratorOutput:
    centers: torch.Tensor  # (B, k)
    widths: torch.Tensor  # (B, k)
    masks: torch.Tensor  # (B, k, n_v)
    positive: torch.Tensor  # (B, n_v)
    beta: torch.Tensor  # (B, k) aggregation weights
    fusion_beta: torch.Tensor | None  # (B, 2) in attention mode
    summary_f: torch.Tensor  # (B, d_h)
    summary_i: torch.Tensor  # (B, d_h)


class MaskGenerator(nn.Module):
    """Fusion + proposal head + Gaussian masks + aggregation, end to end."""

    def __init__(self, d_v: int, d_w: int, d_h: int, n_v: int, n_q: int, k: int,
                 alpha: float, mode: str = ATTENTION, width_cap: float = 1.0,
                 n_layers: int = 3, n_heads: int = 4):
        super().__init__()
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.alpha = alpha
        self.n_v = n_v
        self.fusion = FusionModule(d_v, d_w, d_h, n_v, n_q, n_layers, n_heads)
        self.head = ProposalHead(d_h, k, mode=mode, width_cap=width_cap)
        self.aggregator = MaskAggregator(n_v)

    def forward(self, video: torch.Tensor, query_fwd: torch.Tensor,
                query_padding: torch.Tensor,
                query_inv: torch.Tensor | None = None) -> GeneratorOutput:
        """query_inv is the reversed-query embedding stream; when absent
        (single-task training) the forward summary stands in for both."""
        if query_inv is not None:
            # both streams share parameters, so run them as one batch
            b = video.shape[0]
            fused = self.fusion(video.repeat(2, 1, 1),
                                torch.cat([query_fwd, query_inv], dim=0),
                                query_padding.repeat(2, 1))
            summary = self.fusion.summary(fused)
            h_f, h_i = summary[:b], summary[b:]
        else:
            h_f = self.fusion.summary(self.fusion(video, query_fwd, query_padding))
            h_i = h_f
        centers, widths, fusion_beta = self.head(h_f, h_i)
        masks = gaussian_masks(centers, widths, self.n_v, self.alpha)
        positive, beta = self.aggregator(masks)
        return GeneratorOutput(
            centers=centers,
            widths=widths,
            masks=masks,
            positive=positive,
            beta=beta,
            fusion_beta=fusion_beta,
            summary_f=h_f,
            summary_i=h_i,
        )


def _proposal_set(centers: torch.Tensor, widths: torch.Tensor,
                  scores: torch.Tensor | None = None) -> ProposalSet:
    centers = centers.detach()
    widths = widths.detach()
    k = centers.shape[-1]
    if scores is None:
        scores = torch.full((k,), 1.0 / k, dtype=centers.dtype)
    return ProposalSet(
        proposals=tuple(
            Proposal(center=float(c), width=float(w), score=float(s))
            for c, w, s in zip(centers, widths, scores)
        )
    )


def predict_proposals_concat(h_f: torch.Tensor, h_i: torch.Tensor,
                             head: ProposalHead) -> ProposalSet:
    """Single-example concat-mode prediction; scores uniform 1/k."""
    if head.mode != CONCAT:
        raise ValueError("head is not in concat mode")
    centers, widths, _ = head(h_f.unsqueeze(0), h_i.unsqueeze(0))
    return _proposal_set(centers.squeeze(0), widths.squeeze(0))


def predict_proposals_attn(h_f: torch.Tensor, h_i: torch.Tensor,
                           head: ProposalHead) -> ProposalSet:
    """Single-example additive-attention prediction; scores uniform 1/k."""
    if head.mode != ATTENTION:
        raise ValueError("head is not in attention mode")
    centers, widths, _ = head(h_f.unsqueeze(0), h_i.unsqueeze(0))
    return _proposal_set(centers.squeeze(0), widths.squeeze(0))
