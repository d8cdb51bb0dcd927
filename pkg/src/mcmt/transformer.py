"""Transformer building blocks shared by the fusion and reconstruction stacks.

The distinctive piece is clip-weight conditioning: post-softmax attention
weights toward key position j are multiplied by ``key_weights[j]`` and
renormalized over keys.  Keys whose weight is exactly zero therefore
contribute nothing to the value aggregation, and when every key is zeroed
the attention output for that query collapses to zero instead of NaN.

Layers are pre-norm with plain residual adds and no final LayerNorm, so a
block whose parameters are all zero reduces exactly to the identity map.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def init_linear(linear: nn.Linear) -> None:
    """Fan-in-scaled uniform weights, zero bias."""
    fan_in = linear.weight.shape[1]
    bound = 1.0 / math.sqrt(fan_in)
    nn.init.uniform_(linear.weight, -bound, bound)
    if linear.bias is not None:
        nn.init.zeros_(linear.bias)


def reweight_attention(attn: torch.Tensor, key_weights: torch.Tensor) -> torch.Tensor:
    """Multiply post-softmax attention by per-key weights and renormalize.

    attn: (..., n_keys) rows summing to 1; key_weights: broadcastable
    (..., n_keys) in [0, 1].  Rows whose reweighted mass vanishes come back
    as all-zero rows (no epsilon: zero-weight keys must have exactly zero
    influence, and the gradient path stays NaN-free).
    """
    weighted = attn * key_weights
    denom = weighted.sum(dim=-1, keepdim=True)
    safe = torch.where(denom > 0, denom, torch.ones_like(denom))
    out = weighted / safe
    return torch.where(denom > 0, out, torch.zeros_like(out))


class MultiHeadAttention(nn.Module):
    """Standard multi-head attention with optional key-weight conditioning."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"n_heads={n_heads} must divide d_model={d_model}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        for lin in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            init_linear(lin)

    def forward(
        self,
        query: torch.Tensor,  # (B, Lq, d)
        key: torch.Tensor,  # (B, Lk, d)
        value: torch.Tensor,  # (B, Lk, d)
        attn_bias: torch.Tensor | None = None,  # additive (Lq, Lk) or (B, 1, Lq, Lk)
        key_padding: torch.Tensor | None = None,  # (B, Lk) bool, True = masked out
        key_weights: torch.Tensor | None = None,  # (B, Lk) multiplicative, in [0, 1]
    ) -> torch.Tensor:
        b, lq, _ = query.shape
        lk = key.shape[1]
        q = self.q_proj(query).view(b, lq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(key).view(b, lk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(value).view(b, lk, self.n_heads, self.d_head).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)  # (B, H, Lq, Lk)
        if attn_bias is not None:
            scores = scores + attn_bias
        if key_padding is not None:
            scores = scores.masked_fill(key_padding[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        if key_weights is not None:
            attn = reweight_attention(attn, key_weights[:, None, None, :])
        out = attn @ v  # (B, H, Lq, d_head)
        out = out.transpose(1, 2).reshape(b, lq, self.d_model)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        init_linear(self.fc1)
        init_linear(self.fc2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm self-attention encoder layer."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.ffn = FeedForward(d_model, d_ff)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(
        self,
        x: torch.Tensor,
        key_padding: torch.Tensor | None = None,
        key_weights: torch.Tensor | None = None,
    ) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, h, key_padding=key_padding, key_weights=key_weights)
        x = x + self.ffn(self.norm2(x))
        return x


class DecoderLayer(nn.Module):
    """Pre-norm decoder layer: self-attention then cross-attention then FFN."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.cross_attn = MultiHeadAttention(d_model, n_heads)
        self.ffn = FeedForward(d_model, d_ff)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        self_attn_bias: torch.Tensor | None = None,
        memory_key_padding: torch.Tensor | None = None,
        memory_key_weights: torch.Tensor | None = None,
    ) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, h, attn_bias=self_attn_bias)
        h = self.norm2(x)
        x = x + self.cross_attn(
            h,
            memory,
            memory,
            key_padding=memory_key_padding,
            key_weights=memory_key_weights,
        )
        x = x + self.ffn(self.norm3(x))
        return x


class Encoder(nn.Module):
    def __init__(self, d_model: int, n_heads: int, n_layers: int, d_ff: int | None = None):
        super().__init__()
        d_ff = d_ff or 4 * d_model
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ff) for _ in range(n_layers))

    def forward(self, x, key_padding=None, key_weights=None):
        for layer in self.layers:
            x = layer(x, key_padding=key_padding, key_weights=key_weights)
        return x


class Decoder(nn.Module):
    def __init__(self, d_model: int, n_heads: int, n_layers: int, d_ff: int | None = None):
        super().__init__()
        d_ff = d_ff or 4 * d_model
        self.layers = nn.ModuleList(DecoderLayer(d_model, n_heads, d_ff) for _ in range(n_layers))

    def forward(
        self,
        x,
        memory,
        self_attn_bias=None,
        memory_key_padding=None,
        memory_key_weights=None,
    ):
        for layer in self.layers:
            x = layer(
                x,
                memory,
                self_attn_bias=self_attn_bias,
                memory_key_padding=memory_key_padding,
                memory_key_weights=memory_key_weights,
            )
        return x


def causal_bias(length: int, dtype: torch.dtype, device=None) -> torch.Tensor:
    """Additive bias letting position i attend to positions <= i."""
    mask = torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)
    bias = torch.zeros(length, length, dtype=dtype, device=device)
    return bias.masked_fill(mask, float("-inf"))
