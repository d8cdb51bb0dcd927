"""Mask-conditioned query reconstruction.

A masked query (one third of its words replaced by the MASK symbol, content
words sampled preferentially) is decoded against a video whose clips are
weighted by an arbitrary clip mask.  Reconstruction quality then measures
how well the clips selected by that mask explain the query.  The inverse
stream runs the same machinery on the reversed token sequence, sharing all
parameters with the forward stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from .dataio.vocab import MASK_ID, TokenizedQuery
from .transformer import Decoder, Encoder, causal_bias, init_linear


class Direction(Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class MaskedQuery:
    """A query with masked-out positions plus its reconstruction targets.

    ``embeddings`` are the original per-token rows; the reconstructor
    substitutes its learned MASK row at ``masked_positions`` on the fly.
    """

    ids: np.ndarray  # (n_q,) with MASK_ID at masked positions
    target_ids: np.ndarray  # (n_q,) original ids
    masked_positions: np.ndarray  # sorted indices within [0, valid_len)
    direction: Direction
    valid_len: int
    embeddings: np.ndarray  # (n_q, d_w) original rows

    def __post_init__(self) -> None:
        expected = math.ceil(self.valid_len / 3)
        if len(self.masked_positions) != expected:
            raise ValueError(
                f"{len(self.masked_positions)} masked positions, expected {expected}"
            )
        if self.valid_len and self.masked_positions.max(initial=0) >= self.valid_len:
            raise ValueError("masked position outside the valid token range")

    @property
    def mask_flags(self) -> np.ndarray:
        flags = np.zeros(self.ids.shape[0], dtype=bool)
        flags[self.masked_positions] = True
        return flags


def mask_query(query: TokenizedQuery, rng: np.random.Generator,
               direction: Direction = Direction.FORWARD) -> MaskedQuery:
    """Mask ceil(valid_len / 3) positions, content words 3x as likely.

    Sampling is without replacement from the caller-supplied RNG stream,
    so data pipelines stay reproducible per example.
    """
    if query.valid_len < 1:
        raise ValueError("cannot mask an empty query")
    n_masked = math.ceil(query.valid_len / 3)
    weights = np.where(query.content_flags[: query.valid_len], 3.0, 1.0)
    probs = weights / weights.sum()
    positions = rng.choice(query.valid_len, size=n_masked, replace=False, p=probs)
    positions = np.sort(positions)
    masked_ids = query.ids.copy()
    masked_ids[positions] = MASK_ID
    return MaskedQuery(
        ids=masked_ids,
        target_ids=query.ids.copy(),
        masked_positions=positions,
        direction=direction,
        valid_len=query.valid_len,
        embeddings=query.embeddings,
    )


def reverse_query(query: TokenizedQuery) -> TokenizedQuery:
    """Reverse the valid tokens; padding stays at the tail."""
    if query.valid_len < 1:
        raise ValueError("cannot reverse an empty query")
    n = query.valid_len
    ids = query.ids.copy()
    flags = query.content_flags.copy()
    emb = query.embeddings.copy()
    ids[:n] = ids[:n][::-1]
    flags[:n] = flags[:n][::-1]
    emb[:n] = emb[:n][::-1]
    return TokenizedQuery(ids=ids, valid_len=n, content_flags=flags, embeddings=emb)


def _positions(n: int, d_model: int) -> nn.Parameter:
    bound = 1.0 / math.sqrt(d_model)
    return nn.Parameter(torch.empty(n, d_model).uniform_(-bound, bound))


class Reconstructor(nn.Module):
    """Masked-query decoder conditioned on clip-weighted video attention.

    The video encoder multiplies post-softmax self-attention by the clip
    mask (renormalized), and the causal query decoder applies the same rule
    to its cross-attention, so clips with zero weight cannot influence any
    output logit while non-trivial masks stay fully differentiable.
    """

    def __init__(self, d_v: int, d_w: int, d: int, n_v: int, n_q: int, n_vocab: int,
                 n_layers: int = 3, n_heads: int = 4):
        super().__init__()
        self.n_q = n_q
        self.n_vocab = n_vocab
        self.video_proj = nn.Linear(d_v, d)
        self.word_proj = nn.Linear(d_w, d)
        self.out_proj = nn.Linear(d, n_vocab)
        for lin in (self.video_proj, self.word_proj, self.out_proj):
            init_linear(lin)
        bound = 1.0 / math.sqrt(d_w)
        self.mask_embedding = nn.Parameter(torch.empty(d_w).uniform_(-bound, bound))
        self.pos_video = _positions(n_v, d)
        self.pos_query = _positions(n_q, d)
        self.encoder = Encoder(d, n_heads, n_layers)
        self.decoder = Decoder(d, n_heads, n_layers)
        self.double()

    def masked_encode(self, video: torch.Tensor, clip_weights: torch.Tensor) -> torch.Tensor:
        """video: (B, n_v, d_v); clip_weights: (B, n_v) in [0, 1].
        Returns the clip-weight-conditioned encoding (B, n_v, d)."""
        x = self.video_proj(video) + self.pos_video
        return self.encoder(x, key_weights=clip_weights)

    def masked_decode(self, word_emb: torch.Tensor, mask_flags: torch.Tensor,
                      memory: torch.Tensor, clip_weights: torch.Tensor) -> torch.Tensor:
        """word_emb: (B, n_q, d_w) original rows; mask_flags: (B, n_q) bool
        marking MASK positions; memory: (B, n_v, d); clip_weights: (B, n_v).
        Returns per-position hidden states (B, n_q, d).  Self-attention is
        causal: position i sees positions <= i only."""
        emb = torch.where(mask_flags.unsqueeze(-1), self.mask_embedding, word_emb)
        x = self.word_proj(emb) + self.pos_query
        bias = causal_bias(x.shape[1], x.dtype, x.device)
        return self.decoder(x, memory, self_attn_bias=bias, memory_key_weights=clip_weights)

    def word_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.out_proj(hidden)

    def word_distribution(self, hidden: torch.Tensor) -> torch.Tensor:
        """Per-position softmax over the vocabulary, (..., n_q, n_vocab)."""
        logits = self.word_logits(hidden)
        if not torch.isfinite(logits).all():
            raise RuntimeError("non-finite reconstruction logits")
        return torch.softmax(logits, dim=-1)

    def forward(self, word_emb: torch.Tensor, mask_flags: torch.Tensor,
                video: torch.Tensor, clip_weights: torch.Tensor) -> torch.Tensor:
        """Full pass: returns logits (B, n_q, n_vocab)."""
        memory = self.masked_encode(video, clip_weights)
        hidden = self.masked_decode(word_emb, mask_flags, memory, clip_weights)
        return self.word_logits(hidden)
