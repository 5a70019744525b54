"""Shared domain vocabulary: style specs, latents, patch sets and configs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import torch

from .errors import AllZeroWeights, ConfigError, ShapeMismatch
from .images import IMAGE_SIZE, check_image, content_hash

DEFAULT_WEIGHT_BUDGET = 1000.0


def _check_weight(weight, what):
    if not isinstance(weight, (int, float)) or isinstance(weight, bool):
        raise ConfigError(f"{what}: weight must be a real number, got {weight!r}")
    if not math.isfinite(weight) or weight < 0:
        raise ConfigError(f"{what}: weight must be finite and >= 0, got {weight!r}")


@dataclass(frozen=True)
class TextRef:
    text: str
    weight: float = 1.0

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ConfigError("text reference must be a non-empty string")
        _check_weight(self.weight, f"text {self.text!r}")


@dataclass(frozen=True, eq=False)
class ImageRef:
    image: torch.Tensor
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        try:
            check_image(self.image, IMAGE_SIZE, name=f"image reference {self.name!r}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        _check_weight(self.weight, f"image {self.name!r}")
        object.__setattr__(self, "_hash", content_hash(self.image))

    @property
    def digest(self) -> str:
        return self._hash

    def with_weight(self, weight: float) -> "ImageRef":
        return ImageRef(self.image, weight, self.name)


@dataclass(frozen=True)
class StyleSpec:
    """A weighted mixture of text and image style references."""

    text_refs: tuple[TextRef, ...] = ()
    image_refs: tuple[ImageRef, ...] = ()
    weight_budget: float = DEFAULT_WEIGHT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "text_refs", tuple(self.text_refs))
        object.__setattr__(self, "image_refs", tuple(self.image_refs))
        if not self.text_refs and not self.image_refs:
            raise ConfigError("style spec needs at least one text or image reference (text_refs/image_refs are empty)")
        for ref in self.text_refs:
            if not isinstance(ref, TextRef):
                raise ConfigError(f"text_refs must hold TextRef, got {type(ref).__name__}")
        for ref in self.image_refs:
            if not isinstance(ref, ImageRef):
                raise ConfigError(f"image_refs must hold ImageRef, got {type(ref).__name__}")
        if not (isinstance(self.weight_budget, (int, float)) and math.isfinite(self.weight_budget)
                and self.weight_budget > 0):
            raise ConfigError(f"weight_budget must be a positive real, got {self.weight_budget!r}")
        if all(w == 0 for w in self.weights):
            raise AllZeroWeights("every style weight is 0")

    @property
    def weights(self) -> list[float]:
        """Weights in reference order: texts first, then images."""
        return [r.weight for r in self.text_refs] + [r.weight for r in self.image_refs]

    def with_weights(self, weights: Sequence[float]) -> "StyleSpec":
        weights = list(weights)
        n_t = len(self.text_refs)
        if len(weights) != n_t + len(self.image_refs):
            raise ConfigError(f"expected {n_t + len(self.image_refs)} weights, got {len(weights)}")
        texts = tuple(TextRef(r.text, float(w)) for r, w in zip(self.text_refs, weights[:n_t]))
        images = tuple(r.with_weight(float(w)) for r, w in zip(self.image_refs, weights[n_t:]))
        return StyleSpec(texts, images, self.weight_budget)

    def is_normalized(self) -> bool:
        return _sums_to(self.weights, self.weight_budget)

    def canonical(self) -> "StyleSpec":
        """Normalized spec with duplicates merged, zero weights dropped and refs sorted."""
        texts: dict[str, float] = {}
        for r in self.text_refs:
            texts[r.text] = texts.get(r.text, 0.0) + r.weight
        images: dict[str, ImageRef] = {}
        for r in self.image_refs:
            prev = images.get(r.digest)
            images[r.digest] = r if prev is None else prev.with_weight(prev.weight + r.weight)
        spec = StyleSpec(
            tuple(TextRef(t, w) for t, w in sorted(texts.items()) if w > 0),
            tuple(images[d] for d in sorted(images) if images[d].weight > 0),
            self.weight_budget,
        )
        return normalize_weights(spec)

    def is_single_image(self) -> bool:
        c = self.canonical()
        return not c.text_refs and len(c.image_refs) == 1

    def describe(self) -> str:
        parts = [f"text:{r.text!r}@{r.weight:g}" for r in self.text_refs]
        parts += [f"image:{r.name or r.digest[:8]}@{r.weight:g}" for r in self.image_refs]
        return ", ".join(parts)


def _sums_to(weights: Iterable[float], budget: float) -> bool:
    weights = list(weights)
    return abs(math.fsum(weights) - budget) <= math.ulp(budget) and _naive_ok(weights, budget)


def normalize_weights(spec: StyleSpec) -> StyleSpec:
    """Rescale weights proportionally so that they sum to ``spec.weight_budget``."""
    weights = spec.weights
    if all(w == 0 for w in weights):
        raise AllZeroWeights("every style weight is 0")
    if _sums_to(weights, spec.weight_budget):
        return spec
    total = sum(Fraction(w) for w in weights)
    budget = Fraction(spec.weight_budget)
    scaled = [float(Fraction(w) * budget / total) for w in weights]
    # push the rounding residue onto the largest weight, then nudge it by a few
    # ulps until both the exact and the naive left-to-right sums are within one ulp
    k = max(range(len(scaled)), key=scaled.__getitem__)
    scaled[k] += spec.weight_budget - math.fsum(scaled)
    base = scaled[k]
    for m in sorted(range(-8, 9), key=abs):
        scaled[k] = base + m * math.ulp(base)
        if _sums_to(scaled, spec.weight_budget):
            break
    else:
        scaled[k] = base
    return spec.with_weights(scaled)


def _naive_ok(weights, budget) -> bool:
    return abs(sum(weights) - budget) <= math.ulp(budget)


def spec_digest(spec: StyleSpec, identities: Sequence[str] = (), extra: Mapping | None = None) -> str:
    """Stable digest of a spec, the backend identities and a config snapshot.

    Reference order, duplicate references and zero-weight references do not
    affect the digest.
    """
    c = spec.canonical()
    payload = {
        "budget": round(float(c.weight_budget), 6),
        "text": [[r.text, round(r.weight, 6)] for r in c.text_refs],
        "image": [[r.digest, round(r.weight, 6)] for r in c.image_refs],
        "backends": list(identities),
        "config": extra or {},
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Per-layer latent vectors, shape ``(L, D)``."""

    layers: torch.Tensor

    def __post_init__(self):
        if not isinstance(self.layers, torch.Tensor) or self.layers.ndim != 2:
            raise ShapeMismatch("latent layers must be a 2-D tensor (L, D)")
        if not torch.isfinite(self.layers).all():
            raise ConfigError("latent has non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.layers.shape)

    def check_shape(self, shape) -> "LatentCode":
        if self.shape != tuple(shape):
            raise ShapeMismatch(f"latent shape {self.shape} does not match backend shape {tuple(shape)}")
        return self


@dataclass(frozen=True, eq=False)
class StyleRepresentation:
    image: torch.Tensor
    latent: LatentCode
    final_loss: float
    spec_digest: str


@dataclass(frozen=True, eq=False)
class PatchSet:
    """A stack of square patches, shape ``(N, 3, s, s)``."""

    patches: torch.Tensor
    source_id: str
    rng_seed: int

    def __len__(self):
        return self.patches.shape[0]

    @property
    def side(self) -> int:
        return self.patches.shape[-1]

    def validate(self, n_crop: int | None = None) -> "PatchSet":
        p = self.patches
        if p.ndim != 4 or p.shape[1] != 3 or p.shape[2] != p.shape[3]:
            raise ShapeMismatch(f"patches must be (N, 3, s, s), got {tuple(p.shape)}")
        if n_crop is not None and p.shape[0] != n_crop:
            raise ShapeMismatch(f"expected {n_crop} patches, got {p.shape[0]}")
        if p.numel() and (p.min() < 0 or p.max() > 1):
            raise ConfigError("patch values must lie in [0, 1]")
        return self

    def replace(self, patches: torch.Tensor) -> "PatchSet":
        return PatchSet(patches, self.source_id, self.rng_seed)


class _Config:
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _positive_int(value, what):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{what} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class PatchConfig(_Config):
    n_crop: int = 64
    patch_size: int = 256
    embed_size: int = 224
    distortion_scale: float = 0.5
    augment: bool = True

    def __post_init__(self):
        _positive_int(self.n_crop, "n_crop")
        _positive_int(self.patch_size, "patch_size")
        _positive_int(self.embed_size, "embed_size")
        if not 0.0 <= self.distortion_scale <= 1.0:
            raise ConfigError(f"distortion_scale must lie in [0, 1], got {self.distortion_scale!r}")


@dataclass(frozen=True)
class InversionConfig(_Config):
    learning_rate: float = 0.2
    iterations: int = 20
    init_candidates: int = 16
    early_stop_tol: float = 0.0
    rng_seed: int = 0
    fixed_patches: bool = False

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        _positive_int(self.iterations, "iterations")
        _positive_int(self.init_candidates, "init_candidates")
        if not self.early_stop_tol >= 0:
            raise ConfigError(f"early_stop_tol must be >= 0, got {self.early_stop_tol!r}")
        if not isinstance(self.rng_seed, int):
            raise ConfigError("rng_seed must be an integer")


@dataclass(frozen=True)
class BoostConfig(_Config):
    n_styles: int = 4

    def __post_init__(self):
        _positive_int(self.n_styles, "n_styles")


__all__ = [
    "BoostConfig", "ImageRef", "InversionConfig", "LatentCode", "PatchConfig", "PatchSet",
    "StyleRepresentation", "StyleSpec", "TextRef", "normalize_weights", "spec_digest",
    "DEFAULT_WEIGHT_BUDGET",
]
