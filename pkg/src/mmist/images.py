"""Image I/O and conversions.

Internally an image is a ``float64`` tensor of shape ``(3, H, W)`` with
channel values in ``[0, 1]``. 8-bit conversion happens only here.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SIZE = 512
DTYPE = torch.float64


def from_uint8(array: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float in [0, 1]."""
    arr = np.asarray(array)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got {arr.shape}")
    return torch.from_numpy(arr.astype(np.float64) / 255.0).permute(2, 0, 1).contiguous()


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) float -> (H, W, 3) uint8, rounding to nearest."""
    arr = image.detach().to(DTYPE).clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()
    return np.rint(arr * 255.0).astype(np.uint8)


def square_resize(pil: Image.Image, size: int = IMAGE_SIZE) -> Image.Image:
    """Center-crop to a square, then resize to ``size``."""
    pil = pil.convert("RGB")
    w, h = pil.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    pil = pil.crop((left, top, left + side, top + side))
    if side != size:
        pil = pil.resize((size, size), Image.Resampling.BICUBIC)
    return pil


def load_image(path, size: int = IMAGE_SIZE) -> torch.Tensor:
    with Image.open(path) as pil:
        return from_uint8(np.asarray(square_resize(pil, size)))


def save_image(image: torch.Tensor, path, fmt: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format=fmt)
    return path


def png_bytes(image: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


def content_hash(image: torch.Tensor) -> str:
    """Stable sha256 over the shape and float64 payload of ``image``."""
    arr = np.ascontiguousarray(image.detach().to(DTYPE).cpu().numpy())
    h = hashlib.sha256()
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def check_image(image, size: int | None = IMAGE_SIZE, name: str = "image") -> torch.Tensor:
    if not isinstance(image, torch.Tensor):
        raise TypeError(f"{name} must be a torch.Tensor, got {type(image).__name__}")
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {tuple(image.shape)}")
    if size is not None and tuple(image.shape[1:]) != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {tuple(image.shape[1:])}")
    if not torch.isfinite(image).all():
        raise ValueError(f"{name} has non-finite values")
    if image.min() < 0 or image.max() > 1:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return image


def default_source_image(size: int = IMAGE_SIZE) -> torch.Tensor:
    """Deterministic photo-like scene used as the default source image.

    A sky gradient over a ground plane with a few soft blobs; mean colour is
    close to mid-grey.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    sky = np.stack([0.45 + 0.15 * (1 - yy), 0.55 + 0.1 * (1 - yy), 0.75 - 0.1 * yy])
    ground = np.stack([0.45 - 0.1 * yy, 0.5 - 0.05 * yy, 0.3 + 0.0 * yy])
    horizon = 1.0 / (1.0 + np.exp(-(yy - 0.55) * 40.0))
    img = sky * (1 - horizon) + ground * horizon
    rng = np.random.default_rng(20230101)
    for _ in range(6):
        cy, cx = rng.uniform(0.2, 0.9, size=2)
        r = rng.uniform(0.04, 0.12)
        colour = rng.uniform(0.2, 0.8, size=3)
        mask = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img = img * (1 - mask) + colour[:, None, None] * mask
    return torch.from_numpy(np.clip(img, 0.0, 1.0))
