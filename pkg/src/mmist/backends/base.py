"""Interfaces for the pretrained generator and the joint image/text embedder."""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..types import LatentCode


class GeneratorBackend(abc.ABC):
    """Maps latent codes to 512x512 RGB images in [0, 1].

    ``synthesize`` and ``map`` must be pure; implementations may be called
    from several threads at once.
    """

    identity: str
    latent_shape: tuple[int, int]
    z_dim: int
    output_size: int = 512

    def sample_z(self, rng) -> torch.Tensor:
        """i.i.d. standard normal vector of length ``z_dim``."""
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        return torch.from_numpy(gen.standard_normal(self.z_dim))

    @abc.abstractmethod
    def map(self, z: torch.Tensor) -> LatentCode:
        ...

    @abc.abstractmethod
    def synthesize(self, w) -> torch.Tensor:
        """``w`` is a LatentCode or a raw ``(L, D)`` tensor (possibly requiring grad)."""

    def _layers(self, w) -> torch.Tensor:
        layers = w.layers if isinstance(w, LatentCode) else w
        if tuple(layers.shape) != tuple(self.latent_shape):
            from ..errors import ShapeMismatch

            raise ShapeMismatch(f"latent shape {tuple(layers.shape)} != backend shape {tuple(self.latent_shape)}")
        return layers


class EmbedderBackend(abc.ABC):
    identity: str
    embed_dim: int
    input_size: int = 224

    @abc.abstractmethod
    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        """``(N, 3, s, s)`` with ``s == input_size`` -> ``(N, E)``."""

    @abc.abstractmethod
    def embed_text(self, texts: Sequence[str]) -> torch.Tensor:
        """list of N strings -> ``(N, E)``."""


@dataclass(frozen=True)
class Backends:
    generator: GeneratorBackend
    embedder: EmbedderBackend
    transfer: object = None  # TransferNetwork; kept untyped to avoid an import cycle

    @property
    def identities(self) -> tuple[str, ...]:
        ids = (self.generator.identity, self.embedder.identity)
        if self.transfer is not None:
            ids += (self.transfer.identity,)
        return ids
