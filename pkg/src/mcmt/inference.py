"""Proposal ranking and retrieval.

Two top-1 strategies: ``attn`` sorts proposals by their aggregation
attention weight; ``vote`` lets proposals vote for each other with
pairwise IoU mass (computed on the clamped normalized intervals), and the
proposal collecting the most mass wins.  Ties break by higher attention
score, then lower index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataio.features import ClipFeatureSequence
from .dataio.vocab import TokenizedQuery
from .intervals import Moment, Proposal, ProposalSet, iou_span, proposal_to_moment
from .mask_generator import MaskGenerator, mine_negatives
from .reconstructor import reverse_query
from .training import Example, TrainConfig


def _normalized_interval(p: Proposal) -> tuple[float, float]:
    return (max(p.center - p.width / 2.0, 0.0), min(p.center + p.width / 2.0, 1.0))


def vote_masses(proposals: ProposalSet, threshold: float | None = None) -> np.ndarray:
    """Per-proposal vote mass: sum of IoU against every other proposal.

    With ``threshold`` set, each pair contributes a binary vote
    (IoU > threshold) instead of its IoU value.
    """
    spans = [_normalized_interval(p) for p in proposals]
    k = len(spans)
    masses = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            pair = iou_span(spans[i][0], spans[i][1], spans[j][0], spans[j][1])
            masses[i] += (pair > threshold) if threshold is not None else pair
    return masses


def _vote_order(proposals: ProposalSet, threshold: float | None = None) -> list[int]:
    masses = vote_masses(proposals, threshold)
    scores = [p.score if p.score is not None else 0.0 for p in proposals]
    return sorted(range(len(proposals)), key=lambda i: (-masses[i], -scores[i], i))


def vote_top1(proposals: ProposalSet, threshold: float | None = None) -> Proposal:
    """The proposal with maximal vote mass (score then index break ties)."""
    return proposals[_vote_order(proposals, threshold)[0]]


def rank_by_attention(proposals: ProposalSet) -> ProposalSet:
    """Stable descending sort by attention score."""
    if any(p.score is None for p in proposals):
        raise ValueError("rank_by_attention requires every proposal to carry a score")
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    return ProposalSet(proposals=tuple(proposals[i] for i in order))


@dataclass(frozen=True)
class RetrievalResult:
    video_id: str
    query: str
    top1: Moment
    ranked: tuple[Moment, ...]
    proposals: ProposalSet  # in ranked order
    strategy: str


def _query_tensors(query: TokenizedQuery, mt_enabled: bool):
    emb_f = torch.from_numpy(query.embeddings).unsqueeze(0)
    pad = torch.from_numpy(np.arange(query.n_q) >= query.valid_len).unsqueeze(0)
    emb_i = None
    if mt_enabled:
        emb_i = torch.from_numpy(reverse_query(query).embeddings).unsqueeze(0)
    return emb_f, emb_i, pad


def _rank_proposals(proposals: ProposalSet, config: TrainConfig,
                    strategy: str | None) -> tuple[ProposalSet, str]:
    strategy = strategy or config.inference_strategy
    if strategy == "vote":
        order = _vote_order(proposals, config.vote_threshold)
        ranked = ProposalSet(proposals=tuple(proposals[i] for i in order))
    elif strategy == "attn":
        ranked = rank_by_attention(proposals)
    else:
        raise ValueError(f"unknown inference strategy {strategy!r}")
    return ranked, strategy


def batch_retrieve(generator: MaskGenerator, config: TrainConfig,
                   examples: Sequence[Example],
                   strategy: str | None = None) -> list[RetrievalResult]:
    """Deterministic eval-mode retrieval over a list of examples."""
    generator.eval()
    results: list[RetrievalResult] = []
    bs = config.batch_size
    for lo in range(0, len(examples), bs):
        chunk = examples[lo : lo + bs]
        video = torch.stack([torch.from_numpy(ex.features.astype(np.float64))
                             for ex in chunk])
        emb_f = torch.stack([torch.from_numpy(ex.query.embeddings) for ex in chunk])
        pad = torch.stack([torch.from_numpy(np.arange(config.n_q) >= ex.query.valid_len)
                           for ex in chunk])
        emb_i = None
        if config.mt_enabled:
            emb_i = torch.stack([torch.from_numpy(reverse_query(ex.query).embeddings)
                                 for ex in chunk])
        with torch.no_grad():
            out = generator(video, emb_f, pad, emb_i)
        for row, ex in enumerate(chunk):
            proposals = ProposalSet(proposals=tuple(
                Proposal(center=float(c), width=float(w), score=float(s))
                for c, w, s in zip(out.centers[row], out.widths[row], out.beta[row])
            ))
            ranked, used = _rank_proposals(proposals, config, strategy)
            moments = tuple(proposal_to_moment(p, ex.duration) for p in ranked)
            results.append(RetrievalResult(
                video_id=ex.video_id, query=ex.query_text, top1=moments[0],
                ranked=moments, proposals=ranked, strategy=used,
            ))
    return results


def retrieve(generator: MaskGenerator, config: TrainConfig,
             video: ClipFeatureSequence, query: TokenizedQuery, query_text: str = "",
             strategy: str | None = None) -> RetrievalResult:
    """Single-example retrieval; see :func:`batch_retrieve`."""
    example = Example(index=0, video_id=video.video_id, duration=video.duration,
                      features=video.features, query_text=query_text, query=query,
                      gt=None)
    return batch_retrieve(generator, config, [example], strategy)[0]


def mask_curves(generator: MaskGenerator, config: TrainConfig,
                video: ClipFeatureSequence, query: TokenizedQuery) -> dict[str, np.ndarray]:
    """Per-clip mask values for plotting: the k Gaussian masks, the
    aggregated positive mask, its easy complement, and the aggregation
    weights."""
    generator.eval()
    video_t = torch.from_numpy(video.features.astype(np.float64)).unsqueeze(0)
    emb_f, emb_i, pad = _query_tensors(query, config.mt_enabled)
    with torch.no_grad():
        out = generator(video_t, emb_f, pad, emb_i)
        triplet = mine_negatives(out.positive)
    return {
        "masks": out.masks[0].numpy(),  # (k, n_v)
        "positive": triplet.positive[0].numpy(),
        "easy": triplet.easy[0].numpy(),
        "beta": out.beta[0].numpy(),
    }


def write_predictions(path: str | Path, results: Sequence[RetrievalResult],
                      k: int) -> None:
    """Line-delimited JSON prediction dump."""
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps({
                "video_id": r.video_id,
                "query": r.query,
                "start": r.top1.start,
                "end": r.top1.end,
                "strategy": r.strategy,
                "k": k,
            }) + "\n")
