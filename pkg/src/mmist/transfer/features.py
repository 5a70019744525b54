"""Style feature banks, their aggregation across styles, and the binary container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..errors import CacheCorruption, ShapeMismatch

NORM_EPS = 1e-5
MAGIC = b"MMSTAGG\x00"
VERSION = 1


def mean_std(feat: torch.Tensor, eps: float = NORM_EPS):
    """Per-channel mean and std over all non-channel axes of ``(C, ...)``."""
    flat = feat.reshape(feat.shape[0], -1)
    mean = flat.mean(dim=1)
    var = flat.var(dim=1, unbiased=False)
    return mean, (var + eps).sqrt()


def channel_normalize(feat: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    mean, std = mean_std(feat, eps)
    shape = (-1,) + (1,) * (feat.ndim - 1)
    return (feat - mean.reshape(shape)) / std.reshape(shape)


@dataclass(frozen=True, eq=False)
class StyleFeatures:
    per_scale: tuple[torch.Tensor, ...]

    def shapes(self) -> list[tuple[int, int, int]]:
        return [tuple(f.shape) for f in self.per_scale]


@dataclass(frozen=True, eq=False)
class AggregatedStyleFeature:
    """Per-scale key/value banks of shape ``(C_s, n_styles * H_s * W_s)``.

    Keys are channel-normalized per style before concatenation; values are
    the raw features.
    """

    keys: tuple[torch.Tensor, ...]
    values: tuple[torch.Tensor, ...]
    n_styles: int
    identities: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.keys) != len(self.values):
            raise ShapeMismatch("keys and values must cover the same scales")
        for k, v in zip(self.keys, self.values):
            if k.shape != v.shape or k.ndim != 2:
                raise ShapeMismatch(f"key/value banks must be matching (C, N) matrices, got {k.shape}, {v.shape}")

    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(v.shape) for v in self.values]

    def to_bytes(self) -> bytes:
        header = {
            "dtype": "<f8",
            "identities": list(self.identities),
            "n_styles": self.n_styles,
            "scales": [{"channels": c, "length": n} for c, n in self.shapes()],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
        for k, v in zip(self.keys, self.values):
            parts.append(np.ascontiguousarray(k.detach().cpu().numpy(), dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(v.detach().cpu().numpy(), dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AggregatedStyleFeature":
        try:
            if data[:8] != MAGIC:
                raise CacheCorruption("bad magic in feature container")
            version, hlen = struct.unpack_from("<HI", data, 8)
            if version != VERSION:
                raise CacheCorruption(f"unsupported feature container version {version}")
            offset = 14
            header = json.loads(data[offset:offset + hlen].decode())
            offset += hlen
            keys, values = [], []
            for sc in header["scales"]:
                c, n = int(sc["channels"]), int(sc["length"])
                size = c * n * 8
                for bank in (keys, values):
                    if offset + size > len(data):
                        raise CacheCorruption("truncated feature payload")
                    arr = np.frombuffer(data, dtype="<f8", count=c * n, offset=offset).reshape(c, n)
                    bank.append(torch.from_numpy(arr.astype(np.float64)))
                    offset += size
            if offset != len(data):
                raise CacheCorruption("trailing bytes after feature payload")
            return cls(tuple(keys), tuple(values), int(header["n_styles"]), tuple(header["identities"]))
        except CacheCorruption:
            raise
        except (ValueError, KeyError, struct.error, UnicodeDecodeError) as exc:
            raise CacheCorruption(f"unreadable feature container: {exc}") from exc


def aggregate_styles(features: Sequence[StyleFeatures], identities: Sequence[str] = ()) -> AggregatedStyleFeature:
    """Concatenate per-style features along the spatial sequence axis, in input order."""
    if not features:
        raise ShapeMismatch("aggregate_styles needs at least one StyleFeatures")
    n_scales = len(features[0].per_scale)
    keys, values = [], []
    for s in range(n_scales):
        ks, vs = [], []
        for f in features:
            if len(f.per_scale) != n_scales:
                raise ShapeMismatch("all StyleFeatures must have the same number of scales")
            feat = f.per_scale[s]
            if feat.shape != features[0].per_scale[s].shape:
                raise ShapeMismatch(f"scale {s}: shape {tuple(feat.shape)} != {tuple(features[0].per_scale[s].shape)}")
            flat = feat.reshape(feat.shape[0], -1)
            ks.append(channel_normalize(flat))
            vs.append(flat)
        keys.append(torch.cat(ks, dim=1))
        values.append(torch.cat(vs, dim=1))
    return AggregatedStyleFeature(tuple(keys), tuple(values), len(features), tuple(identities))
