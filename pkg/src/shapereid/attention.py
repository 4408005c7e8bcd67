"""Residual cross-attention over flattened feature-map positions.

One primitive serves three roles: infrared shape restitution after the early
shape-stream stages, and the two cascaded appearance-enhancement stages on the
final maps. The output projection is zero-initialized, so every instance
starts as an exact identity on its residual input.
"""
from __future__ import annotations

import torch
import torch.nn as nn


class ResidualCrossAttention(nn.Module):
    """out = W_v2(BN(softmax(Q Kᵀ) V)) + residual.

    Q from the query map, K/V from the key/value map, all via 1x1 convs to
    C_inner channels (C/2 by default). Softmax runs over key positions,
    unscaled (temperature exposed for experimentation). BN is 1D over the
    C_inner channels of the aggregated tokens.
    """

    def __init__(self, channels: int, inner_channels: int | None = None,
                 temperature: float = 1.0):
        super().__init__()
        inner = inner_channels if inner_channels is not None else channels // 2
        if inner <= 0:
            raise ValueError("inner_channels must be positive")
        self.channels = channels
        self.inner = inner
        self.temperature = temperature
        self.w_q = nn.Conv2d(channels, inner, 1)
        self.w_k = nn.Conv2d(channels, inner, 1)
        self.w_v = nn.Conv2d(channels, inner, 1)
        self.bn = nn.BatchNorm1d(inner)
        self.w_v2 = nn.Conv2d(inner, channels, 1)
        # zero output projection: the block is the identity on residual at init
        nn.init.zeros_(self.w_v2.weight)
        nn.init.zeros_(self.w_v2.bias)

    def attention_rows(self, query_map: torch.Tensor,
                       kv_map: torch.Tensor) -> torch.Tensor:
        """The (B, N_query, N_key) attention matrix; each row sums to 1."""
        q = self.w_q(query_map).flatten(2).transpose(1, 2)   # B, Nq, Ci
        k = self.w_k(kv_map).flatten(2)                      # B, Ci, Nk
        return torch.softmax(q @ k / self.temperature, dim=-1)

    def forward(self, query_map: torch.Tensor, kv_map: torch.Tensor,
                residual_map: torch.Tensor) -> torch.Tensor:
        if query_map.shape[1] != self.channels or kv_map.shape[1] != self.channels:
            raise ValueError("channel count does not match module")
        if residual_map.shape != query_map.shape:
            raise ValueError("residual/query spatial shapes differ")
        b, _, h, w = query_map.shape
        attn = self.attention_rows(query_map, kv_map)        # B, Nq, Nk
        v = self.w_v(kv_map).flatten(2).transpose(1, 2)      # B, Nk, Ci
        agg = (attn @ v).transpose(1, 2)                     # B, Ci, Nq
        agg = self.bn(agg).reshape(b, self.inner, h, w)
        return self.w_v2(agg) + residual_map


def restitute_infrared_shape(module: ResidualCrossAttention,
                             shape_map: torch.Tensor,
                             app_map: torch.Tensor) -> torch.Tensor:
    """Repair a corrupted IR shape map by querying the paired appearance map.

    The query is the elementwise sum of both maps; attended appearance content
    is added back onto the shape map. Callers must pass IR rows only: visible
    shape maps are correct by construction and bypass restitution.
    """
    return module(shape_map + app_map, app_map, shape_map)


def enhance_stage1(module: ResidualCrossAttention, shape_map: torch.Tensor,
                   app_map: torch.Tensor) -> torch.Tensor:
    """Fuse shape with the appearance content it attends to (residual: shape)."""
    return module(shape_map, app_map, shape_map)


def enhance_stage2(module: ResidualCrossAttention, fused_map: torch.Tensor,
                   app_map: torch.Tensor) -> torch.Tensor:
    """Emphasize shape-related appearance content (residual: appearance)."""
    return module(fused_map, app_map, app_map)
