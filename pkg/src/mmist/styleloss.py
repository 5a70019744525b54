"""Patch-wise directional embedding losses and their weighted sum."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import torch

from .backends.base import EmbedderBackend
from .errors import BackendFailure, ConfigError, EmbedderFailure
from .images import IMAGE_SIZE, check_image, content_hash, default_source_image
from .patches import resize_bilinear, sample_patches
from .types import PatchConfig, PatchSet, StyleSpec

ZERO_NORM = 1e-8

DEFAULT_TEMPLATES = (
    "{}",
    "an image in the style of {}",
    "a picture in the style of {}",
    "artwork in the style of {}",
    "a rendition of {}",
    "{} style",
    "a detailed image of {}",
    "the style of {}",
)


@dataclass(frozen=True, eq=False)
class LossConfig:
    src_text: str = "a photo"
    src_image: torch.Tensor = field(default_factory=default_source_image)
    prompt_templates: tuple[str, ...] = DEFAULT_TEMPLATES
    normalize_embeddings: bool = True
    ref_seed: int = 0

    def __post_init__(self):
        if not isinstance(self.src_text, str) or not self.src_text.strip():
            raise ConfigError("src_text must be a non-empty string")
        try:
            check_image(self.src_image, IMAGE_SIZE, name="src_image")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "prompt_templates", tuple(self.prompt_templates))
        if not self.prompt_templates or any("{}" not in t for t in self.prompt_templates):
            raise ConfigError("prompt_templates must be non-empty and each contain '{}'")
        object.__setattr__(self, "_src_hash", content_hash(self.src_image))

    def to_dict(self) -> dict:
        return {
            "src_text": self.src_text,
            "src_image": self._src_hash,
            "prompt_templates": list(self.prompt_templates),
            "normalize_embeddings": self.normalize_embeddings,
            "ref_seed": self.ref_seed,
        }


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    per_text: list[tuple[int, float]]
    per_image: list[tuple[int, float]]
    total_tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"total": self.total, "per_text": self.per_text, "per_image": self.per_image}

    def log_fields(self) -> str:
        parts = [f"L_sty={self.total:.6f}"]
        parts += [f"L_T{i}={v:.6f}" for i, v in self.per_text]
        parts += [f"L_I{i}={v:.6f}" for i, v in self.per_image]
        return " ".join(parts)


def _embed(fn, arg):
    try:
        out = fn(arg)
    except BackendFailure as exc:
        raise EmbedderFailure(str(exc)) from exc
    if not torch.isfinite(out).all():
        raise EmbedderFailure("embedder returned non-finite values")
    return out


def _l2n(x: torch.Tensor, enabled: bool = True) -> torch.Tensor:
    if not enabled:
        return x
    return x / x.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def unit_or_zero(dirs: torch.Tensor) -> torch.Tensor:
    """Row-wise unit vectors; rows with norm below ``ZERO_NORM`` become 0."""
    norm = dirs.norm(dim=-1, keepdim=True)
    ok = norm >= ZERO_NORM
    return torch.where(ok, dirs / torch.where(ok, norm, torch.ones_like(norm)), torch.zeros_like(dirs))


def _stack(dirs) -> torch.Tensor:
    if isinstance(dirs, torch.Tensor):
        return dirs if dirs.ndim == 2 else dirs.unsqueeze(0)
    return torch.stack([torch.as_tensor(d, dtype=torch.float64) for d in dirs])


def text_direction(text: str, cfg: LossConfig, embedder: EmbedderBackend) -> torch.Tensor:
    """Template-averaged, per-embedding normalized text direction from ``src_text``."""
    if text == cfg.src_text:
        e = _embed(embedder.embed_text, [cfg.prompt_templates[0].format(text)])
        return torch.zeros(e.shape[-1], dtype=e.dtype)
    prompts = [t.format(text) for t in cfg.prompt_templates]
    src_prompts = [t.format(cfg.src_text) for t in cfg.prompt_templates]
    emb = _l2n(_embed(embedder.embed_text, prompts + src_prompts), cfg.normalize_embeddings)
    n = len(prompts)
    return emb[:n].mean(dim=0) - emb[n:].mean(dim=0)


def source_embedding(cfg: LossConfig, embedder: EmbedderBackend) -> torch.Tensor:
    """Embedding of the whole source image (no crop or augmentation)."""
    img = cfg.src_image.unsqueeze(0)
    if img.shape[-1] != embedder.input_size:
        img = resize_bilinear(img, embedder.input_size)
    return _l2n(_embed(embedder.embed_image, img), cfg.normalize_embeddings)[0]


def patch_directions(patches, cfg: LossConfig, embedder: EmbedderBackend,
                     src_embedding: torch.Tensor | None = None) -> torch.Tensor:
    """``(N, E)`` directions ``norm(E_I(patch)) - norm(E_I(I_src))``."""
    batch = patches.patches if isinstance(patches, PatchSet) else patches
    if src_embedding is None:
        src_embedding = source_embedding(cfg, embedder)
    emb = _l2n(_embed(embedder.embed_image, batch), cfg.normalize_embeddings)
    return emb - src_embedding


def text_patch_loss(style_dirs, text_dir) -> torch.Tensor:
    """Mean over patches of ``1 - cos(style_dir, text_dir)``."""
    s = unit_or_zero(_stack(style_dirs))
    t = unit_or_zero(torch.as_tensor(text_dir).reshape(1, -1))
    return (1.0 - s @ t[0]).mean()


def image_patch_loss(style_dirs, ref_dirs) -> torch.Tensor:
    """Mean over all (style, reference) patch pairs of ``1 - cos``."""
    s = unit_or_zero(_stack(style_dirs))
    r = unit_or_zero(_stack(ref_dirs))
    if s.shape[0] == 0 or r.shape[0] == 0:
        raise ValueError("image_patch_loss needs non-empty direction lists")
    return (1.0 - s @ r.T).mean()


def weighted_loss(spec: StyleSpec, style_dirs, text_dirs, ref_dirs) -> LossBreakdown:
    """Weighted sum of per-reference losses given precomputed directions."""
    terms, per_text, per_image = [], [], []
    for i, (ref, d) in enumerate(zip(spec.text_refs, text_dirs)):
        loss = text_patch_loss(style_dirs, d)
        per_text.append((i, loss.item()))
        terms.append(ref.weight * loss)
    for i, (ref, d) in enumerate(zip(spec.image_refs, ref_dirs)):
        loss = image_patch_loss(style_dirs, d)
        per_image.append((i, loss.item()))
        terms.append(ref.weight * loss)
    total = torch.stack(terms).sum()
    return LossBreakdown(total.item(), per_text, per_image, total)


def ref_patch_seed(ref_seed: int, ref_digest: str) -> int:
    """Patch seed for a reference image; independent of its position in the spec."""
    return int(np.random.SeedSequence([ref_seed, int(ref_digest[:16], 16)]).generate_state(1)[0])


class StyleLoss:
    """Weighted sum of text and image patch losses for one normalized spec.

    Text directions, reference-image patch directions and the source
    embedding are computed on first use and then reused.
    """

    def __init__(self, spec: StyleSpec, cfg: LossConfig, patch_cfg: PatchConfig, embedder: EmbedderBackend):
        if not spec.is_normalized():
            raise ConfigError("StyleLoss needs a normalized spec (see normalize_weights)")
        if patch_cfg.embed_size != embedder.input_size:
            raise ConfigError(f"embed_size {patch_cfg.embed_size} != embedder input size {embedder.input_size}")
        self.spec = spec
        self.cfg = cfg
        self.patch_cfg = patch_cfg
        self.embedder = embedder
        self._lock = threading.Lock()
        self._ready = False

    def _prepare(self):
        if self._ready:
            return
        with self._lock:
            if self._ready:
                return
            self._src = source_embedding(self.cfg, self.embedder)
            self._text_dirs = [text_direction(r.text, self.cfg, self.embedder) for r in self.spec.text_refs]
            self._ref_dirs = []
            for r in self.spec.image_refs:
                seed = ref_patch_seed(self.cfg.ref_seed, r.digest)
                ps = sample_patches(r.image, self.patch_cfg, seed, source_id=r.digest)
                self._ref_dirs.append(patch_directions(ps, self.cfg, self.embedder, self._src))
            self._ready = True

    def style_directions(self, style_image: torch.Tensor, patch_seed: int) -> torch.Tensor:
        self._prepare()
        ps = sample_patches(style_image, self.patch_cfg, patch_seed, source_id="style")
        return patch_directions(ps, self.cfg, self.embedder, self._src)

    def from_directions(self, style_dirs: torch.Tensor) -> LossBreakdown:
        self._prepare()
        return weighted_loss(self.spec, style_dirs, self._text_dirs, self._ref_dirs)

    def __call__(self, style_image: torch.Tensor, patch_seed: int) -> LossBreakdown:
        return self.from_directions(self.style_directions(style_image, patch_seed))


_LOSS_CACHE: dict = {}
_LOSS_CACHE_LOCK = threading.Lock()


def get_style_loss(spec: StyleSpec, cfg: LossConfig, patch_cfg: PatchConfig, embedder: EmbedderBackend) -> StyleLoss:
    key = (tuple((r.text, r.weight) for r in spec.text_refs),
           tuple((r.digest, r.weight) for r in spec.image_refs),
           repr(cfg.to_dict()), repr(patch_cfg.to_dict()), id(embedder))
    with _LOSS_CACHE_LOCK:
        loss = _LOSS_CACHE.get(key)
        if loss is None:
            if len(_LOSS_CACHE) > 64:
                _LOSS_CACHE.clear()
            loss = _LOSS_CACHE[key] = StyleLoss(spec, cfg, patch_cfg, embedder)
    return loss


def total_loss(style_image: torch.Tensor, spec: StyleSpec, cfg: LossConfig, patch_cfg: PatchConfig,
               embedder: EmbedderBackend, rng: int) -> LossBreakdown:
    """L_sty of ``style_image``; ``rng`` seeds the style-image patch draw."""
    return get_style_loss(spec, cfg, patch_cfg, embedder)(style_image, rng)
