"""Adapters for real pretrained checkpoints.

Neither adapter is needed for the toy pipeline or the test-suite. The
StyleGAN3 adapter needs the official ``stylegan3`` sources (``dnnlib``,
``torch_utils``) importable to unpickle a network; the CLIP adapter uses
``transformers``.
"""

from __future__ import annotations

import hashlib
import pickle
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F

from ..errors import BackendFailure, ShapeMismatch
from ..types import LatentCode
from .base import EmbedderBackend, GeneratorBackend

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


def file_digest(path, n: int = 12) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:n]


class StyleGAN3Generator(GeneratorBackend):
    """Wraps a ``G_ema`` network (e.g. the WikiArt StyleGAN3-T pickle)."""

    def __init__(self, network, identity: str, device: str = "cpu", output_size: int = 512):
        self.net = network.eval().requires_grad_(False).to(device)
        self.device = device
        self.identity = identity
        self.latent_shape = (int(network.num_ws), int(network.w_dim))
        self.z_dim = int(network.z_dim)
        self.output_size = output_size

    @classmethod
    def from_pickle(cls, path, device: str = "cpu") -> "StyleGAN3Generator":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                net = pickle.load(fh)["G_ema"]
        except (OSError, KeyError, pickle.UnpicklingError, ModuleNotFoundError) as exc:
            raise BackendFailure(f"cannot load generator {path}: {exc}") from exc
        gen = cls(net, f"stylegan3:{path.name}:{file_digest(path)}", device)
        probe = gen.map(torch.zeros(gen.z_dim, dtype=torch.float64))
        if probe.shape != gen.latent_shape:
            raise ShapeMismatch(f"mapping output {probe.shape} != advertised {gen.latent_shape}")
        return gen

    def map(self, z: torch.Tensor) -> LatentCode:
        z = torch.as_tensor(z).reshape(1, -1).float().to(self.device)
        with torch.no_grad():
            ws = self.net.mapping(z, None, truncation_psi=1.0)
        return LatentCode(ws[0].double().cpu())

    def synthesize(self, w) -> torch.Tensor:
        ws = self._layers(w).float().to(self.device).unsqueeze(0)
        img = self.net.synthesis(ws, noise_mode="const")
        img = ((img + 1.0) / 2.0).clamp(0.0, 1.0)
        if img.shape[-1] != self.output_size:
            img = F.interpolate(img, size=(self.output_size, self.output_size), mode="bilinear",
                                align_corners=False, antialias=True)
        return img[0].double().cpu()


class CLIPEmbedder(EmbedderBackend):
    """Image/text towers of a ``transformers`` CLIP model (default ViT-B/32)."""

    input_size = 224

    def __init__(self, model, tokenizer=None, identity: str = "clip", device: str = "cpu"):
        self.model = model.eval().requires_grad_(False).to(device)
        self.tokenizer = tokenizer
        self.identity = identity
        self.device = device
        self.embed_dim = int(model.config.projection_dim)
        self.input_size = int(model.config.vision_config.image_size)
        self._mean = torch.tensor(CLIP_MEAN).reshape(1, 3, 1, 1)
        self._std = torch.tensor(CLIP_STD).reshape(1, 3, 1, 1)

    @classmethod
    def from_pretrained(cls, name: str = "openai/clip-vit-base-patch32", device: str = "cpu") -> "CLIPEmbedder":
        try:
            from transformers import CLIPModel, CLIPTokenizer

            model = CLIPModel.from_pretrained(name)
            tok = CLIPTokenizer.from_pretrained(name)
        except Exception as exc:  # network/files missing, bad name, ...
            raise BackendFailure(f"cannot load CLIP model {name!r}: {exc}") from exc
        return cls(model, tok, f"clip:{name}", device)

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[-1] != self.input_size:
            raise BackendFailure(f"CLIP expects (N, 3, {self.input_size}, {self.input_size}), got {tuple(images.shape)}")
        x = ((images.float() - self._mean) / self._std).to(self.device)
        return _features(self.model.get_image_features(pixel_values=x)).double().cpu()

    def embed_text(self, texts: Sequence[str]) -> torch.Tensor:
        if self.tokenizer is None:
            raise BackendFailure("this CLIP embedder has no tokenizer")
        tok = self.tokenizer(list(texts), padding=True, truncation=True, return_tensors="pt").to(self.device)
        with torch.no_grad():
            out = self.model.get_text_features(**tok)
        return _features(out).double().cpu()


def _features(out):
    # newer transformers versions may wrap the projected features in a model output
    return out if isinstance(out, torch.Tensor) else out.pooler_output
