"""Attention-weighted mean/std of aggregated style values per content position."""

from __future__ import annotations

import math

import torch

from ..errors import ShapeMismatch
from .features import AggregatedStyleFeature, channel_normalize

# queries are processed in row blocks so the attention matrix stays small
MAX_BLOCK_ELEMENTS = 1 << 22


def attentive_stats_banks(content_feat: torch.Tensor, keys: torch.Tensor, values: torch.Tensor):
    """(M, S) for content ``(C, H, W)`` against key/value banks ``(C, N)``.

    ``A = softmax(Q^T K / sqrt(C))`` with Q the channel-normalized content;
    ``M = A V^T`` and ``S = sqrt(max(A (V*V)^T - M*M, 0))``.
    """
    if content_feat.ndim != 3:
        raise ShapeMismatch(f"content features must be (C, H, W), got {tuple(content_feat.shape)}")
    c, h, w = content_feat.shape
    if keys.shape != values.shape or keys.ndim != 2 or keys.shape[0] != c:
        raise ShapeMismatch(f"banks {tuple(keys.shape)}/{tuple(values.shape)} do not match {c} content channels")
    q = channel_normalize(content_feat.reshape(c, -1)).T
    scale = 1.0 / math.sqrt(c)
    vt, v2t = values.T, (values * values).T
    n = keys.shape[1]
    block = max(1, MAX_BLOCK_ELEMENTS // max(n, 1))
    means, stds = [], []
    for start in range(0, q.shape[0], block):
        attn = torch.softmax((q[start:start + block] @ keys) * scale, dim=1)
        m = attn @ vt
        var = attn @ v2t - m * m
        means.append(m)
        stds.append(var.clamp_min(0.0).sqrt())
    mean = torch.cat(means).T.reshape(c, h, w)
    std = torch.cat(stds).T.reshape(c, h, w)
    return mean, std


def attentive_stats(content_feat: torch.Tensor, agg: AggregatedStyleFeature, scale: int):
    return attentive_stats_banks(content_feat, agg.keys[scale], agg.values[scale])


def attention_weights(content_feat: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    """Full ``(H*W, N)`` attention matrix; for diagnostics and tests on small inputs."""
    c = content_feat.shape[0]
    q = channel_normalize(content_feat.reshape(c, -1)).T
    return torch.softmax((q @ keys) / math.sqrt(c), dim=1)
