"""Feature extractor / decoder pairs used by the transfer module."""

from __future__ import annotations

import abc
import hashlib
from typing import Sequence

import torch
import torch.nn.functional as F

from ..errors import BackendFailure
from ..images import IMAGE_SIZE
from .features import StyleFeatures

DTYPE = torch.float64


class TransferNetwork(abc.ABC):
    """Frozen extractor F_f plus the decoder half of F_t."""

    identity: str

    @abc.abstractmethod
    def extract_features(self, image: torch.Tensor) -> StyleFeatures:
        ...

    @abc.abstractmethod
    def decode(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        """Per-scale stylized features -> RGB image in [0, 1]."""


class ToyTransferNet(TransferNetwork):
    """Average-pool pyramid with fixed random 1x1 projections.

    At scale factor ``f``: ``feat = tanh(P @ avgpool_f(image) + q)``. The
    decoder inverts each scale through the pseudo-inverse of ``P``,
    upsamples bilinearly and averages the scales.
    """

    def __init__(self, seed: int = 7, factors: Sequence[int] = (8, 16), channels: Sequence[int] = (8, 16),
                 image_size: int = IMAGE_SIZE):
        if len(factors) != len(channels):
            raise ValueError("factors and channels must have the same length")
        gen = torch.Generator().manual_seed(seed)
        self.factors = tuple(factors)
        self.channels = tuple(channels)
        self.image_size = image_size
        self.proj = [torch.randn(c, 3, generator=gen, dtype=DTYPE) * 0.8 for c in channels]
        self.offset = [torch.randn(c, generator=gen, dtype=DTYPE) * 0.1 for c in channels]
        self.pinv = [torch.linalg.pinv(p) for p in self.proj]
        h = hashlib.sha256(repr((self.factors, self.channels)).encode())
        for t in self.proj + self.offset:
            h.update(t.numpy().tobytes())
        self.identity = f"toy-transfer:{h.hexdigest()[:12]}"

    def descriptor(self) -> list[dict]:
        return [{"factor": f, "channels": c, "side": self.image_size // f} for f, c in zip(self.factors, self.channels)]

    def extract_features(self, image: torch.Tensor) -> StyleFeatures:
        if image.ndim != 3 or image.shape[0] != 3:
            raise BackendFailure(f"extractor expects (3, H, W), got {tuple(image.shape)}")
        x = image.to(DTYPE).unsqueeze(0)
        feats = []
        for f, p, q in zip(self.factors, self.proj, self.offset):
            pooled = F.avg_pool2d(x, f)[0]
            feats.append(torch.tanh(torch.einsum("ck,khw->chw", p, pooled) + q[:, None, None]))
        return StyleFeatures(tuple(feats))

    def decode(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        out = torch.zeros(1, 3, self.image_size, self.image_size, dtype=DTYPE)
        for feat, pinv, q in zip(features, self.pinv, self.offset):
            pre = torch.atanh(feat.clamp(-0.999, 0.999)) - q[:, None, None]
            rgb = torch.einsum("kc,chw->khw", pinv, pre).unsqueeze(0)
            out = out + F.interpolate(rgb, size=(self.image_size, self.image_size), mode="bilinear",
                                      align_corners=False)
        return (out[0] / len(features)).clamp(0.0, 1.0)


class ModuleTransferNet(TransferNetwork):
    """Adapter around pretrained torch modules (e.g. an AdaAttN checkpoint).

    ``encoder(image[1,3,H,W]) -> list of [1,C,H,W]`` and
    ``decoder(list of [1,C,H,W]) -> [1,3,H,W]`` in [0, 1].
    """

    def __init__(self, encoder: torch.nn.Module, decoder: torch.nn.Module, identity: str,
                 device: str = "cpu"):
        self.encoder = encoder.eval().to(device)
        self.decoder = decoder.eval().to(device)
        self.identity = identity
        self.device = device

    @classmethod
    def from_torchscript(cls, encoder_path, decoder_path, device: str = "cpu") -> "ModuleTransferNet":
        digest = hashlib.sha256()
        for path in (encoder_path, decoder_path):
            with open(path, "rb") as fh:
                digest.update(fh.read())
        try:
            enc = torch.jit.load(str(encoder_path), map_location=device)
            dec = torch.jit.load(str(decoder_path), map_location=device)
        except (RuntimeError, OSError) as exc:
            raise BackendFailure(f"cannot load transfer network: {exc}") from exc
        return cls(enc, dec, f"module-transfer:{digest.hexdigest()[:12]}", device)

    @torch.no_grad()
    def extract_features(self, image: torch.Tensor) -> StyleFeatures:
        feats = self.encoder(image.float().unsqueeze(0).to(self.device))
        return StyleFeatures(tuple(f[0].double().cpu() for f in feats))

    @torch.no_grad()
    def decode(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        out = self.decoder([f.float().unsqueeze(0).to(self.device) for f in features])
        return out[0].double().cpu().clamp(0.0, 1.0)
