"""Attentive-normalization style transfer over aggregated multi-style features."""

from __future__ import annotations

from typing import Sequence

import torch

from ..errors import ShapeMismatch, StaleCache
from .attention import attention_weights, attentive_stats, attentive_stats_banks
from .features import (AggregatedStyleFeature, StyleFeatures, aggregate_styles, channel_normalize, mean_std)
from .networks import ModuleTransferNet, ToyTransferNet, TransferNetwork


def extract_features(image: torch.Tensor, net: TransferNetwork) -> StyleFeatures:
    return net.extract_features(image)


def build_aggregate(images: Sequence[torch.Tensor], net: TransferNetwork) -> AggregatedStyleFeature:
    """Extract each style image separately, then concatenate."""
    return aggregate_styles([net.extract_features(img) for img in images], identities=(net.identity,))


def stylized_features(content_features: StyleFeatures, agg: AggregatedStyleFeature) -> list[torch.Tensor]:
    """Per scale ``S * IN(content) + M``."""
    if len(content_features.per_scale) != len(agg.values):
        raise ShapeMismatch(f"content has {len(content_features.per_scale)} scales, aggregate has {len(agg.values)}")
    out = []
    for s, feat in enumerate(content_features.per_scale):
        mean, std = attentive_stats(feat, agg, s)
        out.append(std * channel_normalize(feat) + mean)
    return out


def transfer(content: torch.Tensor, agg: AggregatedStyleFeature, net: TransferNetwork) -> torch.Tensor:
    """Single forward pass: extract content features, re-normalize, decode."""
    if agg.identities and net.identity not in agg.identities:
        raise StaleCache(f"aggregate built with {agg.identities}, current transfer network is {net.identity}")
    with torch.no_grad():
        return net.decode(stylized_features(net.extract_features(content), agg))


__all__ = [
    "AggregatedStyleFeature", "ModuleTransferNet", "StyleFeatures", "ToyTransferNet", "TransferNetwork",
    "aggregate_styles", "attention_weights", "attentive_stats", "attentive_stats_banks", "build_aggregate",
    "channel_normalize", "extract_features", "mean_std", "stylized_features", "transfer",
]
