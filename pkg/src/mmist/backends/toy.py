"""Small deterministic, differentiable stand-ins for the pretrained networks.

They are cheap enough for finite-difference checks and exhaustive oracles
while keeping the same interfaces as the real adapters.
"""

from __future__ import annotations

import hashlib
import re
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import BackendFailure, ShapeMismatch
from ..images import default_source_image
from ..patches import resize_bilinear
from ..types import LatentCode
from .base import EmbedderBackend, GeneratorBackend

DTYPE = torch.float64


def _weights_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a.detach().cpu().numpy() if isinstance(a, torch.Tensor) else a).tobytes())
    return h.hexdigest()[:12]


class ToyGenerator(GeneratorBackend):
    """``sigmoid(A2 tanh(A1 vec(w) + b1) + b2 + C vec(w))`` at ``base_res``, nearest-upsampled.

    ``C vec(w)`` is a per-channel offset shared by all pixels.

    The mapping network is ``tanh(Am z)`` broadcast to every layer.
    """

    def __init__(self, seed: int = 0, n_layers: int = 4, w_dim: int = 16, z_dim: int = 8,
                 hidden: int = 64, base_res: int = 16, output_size: int = 512, zero_bias: bool = False,
                 colour_gain: float = 0.5, hidden_gain: float = 0.5):
        if output_size % base_res:
            raise ValueError("output_size must be a multiple of base_res")
        gen = torch.Generator().manual_seed(seed)
        n_in = n_layers * w_dim
        n_out = 3 * base_res * base_res
        self.latent_shape = (n_layers, w_dim)
        self.z_dim = z_dim
        self.output_size = output_size
        self.base_res = base_res
        self.map_matrix = torch.randn(w_dim, z_dim, generator=gen, dtype=DTYPE) / np.sqrt(z_dim)
        self.a1 = torch.randn(hidden, n_in, generator=gen, dtype=DTYPE) * (hidden_gain / np.sqrt(n_in))
        self.a2 = torch.randn(n_out, hidden, generator=gen, dtype=DTYPE) * (3.0 / np.sqrt(hidden))
        self.b1 = torch.randn(hidden, generator=gen, dtype=DTYPE) * 0.1
        self.b2 = torch.randn(n_out, generator=gen, dtype=DTYPE) * 0.1
        # global colour path: every pixel of a channel gets the same offset
        self.colour = torch.randn(3, n_in, generator=gen, dtype=DTYPE) * (colour_gain / np.sqrt(n_in))
        if zero_bias:
            self.b1.zero_()
            self.b2.zero_()
        self.identity = f"toy-generator:{_weights_digest(self.map_matrix, self.a1, self.a2, self.b1, self.b2, self.colour)}"

    def map(self, z: torch.Tensor) -> LatentCode:
        z = torch.as_tensor(z, dtype=DTYPE)
        if z.shape != (self.z_dim,):
            raise ShapeMismatch(f"z must have shape ({self.z_dim},), got {tuple(z.shape)}")
        if not torch.isfinite(z).all():
            raise BackendFailure("non-finite z")
        w = torch.tanh(self.map_matrix @ z)
        return LatentCode(w.unsqueeze(0).repeat(self.latent_shape[0], 1))

    def synthesize_lowres(self, w) -> torch.Tensor:
        layers = self._layers(w).to(DTYPE)
        h = torch.tanh(self.a1 @ layers.reshape(-1) + self.b1)
        spatial = (self.a2 @ h + self.b2).reshape(3, self.base_res, self.base_res)
        offset = (self.colour @ layers.reshape(-1)).reshape(3, 1, 1)
        return torch.sigmoid(spatial + offset)

    def synthesize(self, w) -> torch.Tensor:
        k = self.output_size // self.base_res
        low = self.synthesize_lowres(w)
        return low.repeat_interleave(k, dim=1).repeat_interleave(k, dim=2)


# Toy text vocabulary: each content word is a colour. Template/function words
# carry no colour so prompt templates do not move the embedding.
VOCAB = {
    "oil": (0.55, 0.35, 0.15),
    "painting": (0.6, 0.45, 0.3),
    "watercolor": (0.55, 0.75, 0.9),
    "fire": (0.95, 0.3, 0.05),
    "ice": (0.75, 0.9, 1.0),
    "neon": (0.9, 0.1, 0.9),
    "sunset": (0.95, 0.55, 0.2),
    "forest": (0.1, 0.5, 0.15),
    "ocean": (0.05, 0.3, 0.7),
    "gold": (0.85, 0.7, 0.2),
    "night": (0.05, 0.05, 0.2),
    "desert": (0.85, 0.7, 0.45),
    "pastel": (0.9, 0.8, 0.85),
    "sketch": (0.8, 0.8, 0.8),
    "charcoal": (0.2, 0.2, 0.2),
    "mosaic": (0.3, 0.6, 0.6),
    "cubism": (0.6, 0.5, 0.35),
}
STOPWORDS = frozenset(
    "a an the of in on with by style styled image picture artwork rendition detailed version "
    "made from like as".split()
)


PHOTO_TOKENS = frozenset({"photo", "photograph", "realistic", "photorealistic"})


def token_colour(token: str) -> tuple[float, float, float]:
    if token in VOCAB:
        return VOCAB[token]
    d = hashlib.sha256(token.encode()).digest()
    return tuple(b / 255.0 for b in d[:3])


def content_tokens(text: str) -> list[str]:
    tokens = [t for t in re.findall(r"[a-z0-9]+", text.lower()) if t not in STOPWORDS]
    return tokens or ["photo"]


class ToyEmbedder(EmbedderBackend):
    """Linear embedder: average-pool to a ``grid x grid`` layout, then project.

    ``embed_image(x) = M @ vec(avgpool(x)) + b``. A text embeds as the mean of
    its content-token vectors: a colour word maps to the embedding of a uniform
    image of that colour, and photo words map to the embedding of the default
    source image, so both modalities share one space.
    """

    def __init__(self, seed: int = 1, embed_dim: int = 16, grid: int = 4, input_size: int = 224,
                 bias_scale: float = 1.0):
        if input_size % grid:
            raise ValueError("input_size must be a multiple of grid")
        gen = torch.Generator().manual_seed(seed)
        n_feat = 3 * grid * grid
        self.grid = grid
        self.embed_dim = embed_dim
        self.input_size = input_size
        self.projection = torch.randn(embed_dim, n_feat, generator=gen, dtype=DTYPE) / np.sqrt(n_feat)
        self.bias = torch.randn(embed_dim, generator=gen, dtype=DTYPE) * bias_scale
        photo = resize_bilinear(default_source_image().unsqueeze(0), input_size)
        self.photo_vector = self.embed_image(photo)[0]
        self.identity = f"toy-embedder:{_weights_digest(self.projection, self.bias)}"

    def features(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[-1] != self.input_size \
                or images.shape[-2] != self.input_size:
            raise BackendFailure(f"toy embedder expects (N, 3, {self.input_size}, {self.input_size}), "
                                 f"got {tuple(images.shape)}")
        return F.avg_pool2d(images, self.input_size // self.grid).reshape(images.shape[0], -1)

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        return self.features(images.to(DTYPE)) @ self.projection.T + self.bias

    def colour_matrix(self) -> torch.Tensor:
        """``(E, 3)`` map from a uniform colour to its embedding."""
        g2 = self.grid * self.grid
        return self.projection.reshape(self.embed_dim, 3, g2).sum(dim=2)

    def embed_text(self, texts: Sequence[str]) -> torch.Tensor:
        if isinstance(texts, str):
            raise TypeError("embed_text takes a sequence of strings")
        return torch.stack([torch.stack([self.token_vector(t) for t in content_tokens(text)]).mean(dim=0)
                            for text in texts])

    def token_vector(self, token: str) -> torch.Tensor:
        if token in PHOTO_TOKENS:
            return self.photo_vector
        colour = torch.tensor(token_colour(token), dtype=DTYPE)
        return self.colour_matrix() @ colour + self.bias
