"""Build-and-cache aggregated styles, stylize content, sweep style weights."""

from __future__ import annotations

import logging
import math
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Sequence

import torch

from .backends.base import Backends
from .cache import CachedStyle, RepresentationThumb, StyleCache, thumbnail
from .errors import CacheCorruption, ConfigError, StaleCache
from .inversion import invert_many
from .styleloss import LossConfig
from .transfer import build_aggregate, transfer
from .types import BoostConfig, InversionConfig, PatchConfig, StyleSpec, spec_digest

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StyleConfigs:
    patch: PatchConfig = field(default_factory=PatchConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    bypass_single_image: bool = True

    def snapshot(self) -> dict:
        return {
            "patch": self.patch.to_dict(),
            "inversion": self.inversion.to_dict(),
            "boost": self.boost.to_dict(),
            "loss": self.loss.to_dict(),
            "bypass_single_image": self.bypass_single_image,
        }


def style_digest(spec: StyleSpec, configs: StyleConfigs, backends: Backends) -> str:
    return spec_digest(spec, backends.identities, configs.snapshot())


def spec_summary(spec: StyleSpec) -> dict:
    c = spec.canonical()
    return {
        "text": [r.text for r in c.text_refs],
        "image": [r.name or r.digest[:12] for r in c.image_refs],
        "weights": c.weights,
    }


_FLIGHTS: dict[str, threading.Lock] = defaultdict(threading.Lock)
_FLIGHTS_LOCK = threading.Lock()


def _flight(digest: str) -> threading.Lock:
    with _FLIGHTS_LOCK:
        return _FLIGHTS[digest]


def _check_transfer(backends: Backends):
    if backends.transfer is None:
        raise ConfigError("backends.transfer (the style transfer network) is required")


def build_style(spec: StyleSpec, configs: StyleConfigs, backends: Backends, cache: StyleCache | None = None,
                jobs: int = 1, return_traces: bool = False):
    """Cached aggregated style feature for ``spec``; inverts only on a cache miss.

    With ``return_traces`` the result is ``(CachedStyle, traces)``; traces is
    empty on a cache hit or a single-image bypass.
    """
    _check_transfer(backends)
    canonical = spec.canonical()
    digest = style_digest(canonical, configs, backends)
    with _flight(digest):
        if cache is not None:
            try:
                hit = cache.get(digest)
            except CacheCorruption as exc:
                log.warning("event=cache_corrupt digest=%s detail=%r action=rebuild", digest[:8], str(exc))
                cache.evict(digest)
                hit = None
            if hit is not None:
                log.info("event=cache_hit digest=%s", digest[:8])
                return (hit, []) if return_traces else hit

        traces = []
        if configs.bypass_single_image and canonical.is_single_image():
            log.info("event=bypass digest=%s reason=single_image_spec", digest[:8])
            agg = build_aggregate([canonical.image_refs[0].image], backends.transfer)
            reps = []
        else:
            log.info("event=build digest=%s n_styles=%d", digest[:8], configs.boost.n_styles)
            reps, traces = invert_many(canonical, configs.boost, configs.inversion, configs.patch, configs.loss,
                                       backends, jobs=jobs, digest=digest, return_traces=True)
            agg = build_aggregate([r.image for r in reps], backends.transfer)
        entry = CachedStyle(
            digest=digest,
            agg=agg,
            representations=[RepresentationThumb(thumbnail(r.image), r.final_loss, r.latent.layers.tolist())
                             for r in reps],
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            config=configs.snapshot(),
            spec_summary=spec_summary(canonical),
        )
        if cache is not None:
            cache.put(entry)
        return (entry, traces) if return_traces else entry


def stylize(contents: Sequence[torch.Tensor], cached: CachedStyle, backends: Backends) -> list[torch.Tensor]:
    """One stylized image per content, in order; forward passes only."""
    _check_transfer(backends)
    net = backends.transfer
    if net.identity not in cached.agg.identities:
        raise StaleCache(f"style {cached.digest[:8]} was built with {cached.agg.identities}, "
                         f"current transfer network is {net.identity}")
    return [transfer(c, cached.agg, net) for c in contents]


@dataclass(frozen=True, eq=False)
class InterpolationPlan:
    endpoints: tuple[StyleSpec, ...]
    ratios: tuple[tuple[float, ...], ...]
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        object.__setattr__(self, "ratios", tuple(tuple(float(x) for x in r) for r in self.ratios))
        if not self.endpoints:
            raise ConfigError("interpolation needs at least one endpoint")
        n = len(self.endpoints)
        for r in self.ratios:
            if len(r) != n:
                raise ConfigError(f"ratio tuple {r} has {len(r)} entries, expected {n}")
            if any(x < 0 or not math.isfinite(x) for x in r):
                raise ConfigError(f"ratio tuple {r} has negative or non-finite entries")
            if abs(math.fsum(r) - 1.0) > 1e-9:
                raise ConfigError(f"ratio tuple {r} sums to {math.fsum(r)!r}, expected 1")
        if self.shape is not None and self.shape[0] * self.shape[1] != len(self.ratios):
            raise ConfigError(f"grid shape {self.shape} does not match {len(self.ratios)} ratio tuples")


def linear_ratios(n: int) -> list[tuple[float, float]]:
    """``n`` evenly spaced (1-t, t) pairs from (1, 0) to (0, 1)."""
    if n < 2:
        raise ConfigError("a linear sweep needs at least 2 cells")
    return [(1.0 - i / (n - 1), i / (n - 1)) for i in range(n)]


def bilinear_ratios(rows: int, cols: int) -> list[tuple[float, float, float, float]]:
    """Row-major ratios for four corner endpoints (top-left, top-right, bottom-left, bottom-right)."""
    if rows < 2 or cols < 2:
        raise ConfigError("a bilinear grid needs at least 2x2 cells")
    out = []
    for i in range(rows):
        v = i / (rows - 1)
        for j in range(cols):
            u = j / (cols - 1)
            out.append(((1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v))
    return out


def merge_specs(endpoints: Sequence[StyleSpec], ratio: Sequence[float]) -> StyleSpec:
    """Union of endpoint references, each weighted by ``ratio_e * normalized weight``.

    Identical references add their weights.
    """
    budget = endpoints[0].weight_budget
    texts, images = [], []
    for spec, r in zip(endpoints, ratio):
        if r == 0:
            continue
        norm = spec.canonical()
        scale = budget / norm.weight_budget
        texts += [type(t)(t.text, r * t.weight * scale) for t in norm.text_refs]
        images += [i.with_weight(r * i.weight * scale) for i in norm.image_refs]
    return StyleSpec(tuple(texts), tuple(images), budget).canonical()


def interpolate(plan: InterpolationPlan, configs: StyleConfigs, backends: Backends,
                cache: StyleCache | None = None, jobs: int = 1) -> list[CachedStyle]:
    """One CachedStyle per ratio tuple (row-major if the plan has a shape)."""
    return [build_style(merge_specs(plan.endpoints, r), configs, backends, cache, jobs=jobs) for r in plan.ratios]
