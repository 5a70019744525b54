"""Random square crops, perspective augmentation and embedder resizing.

All draws come from a ``numpy.random.Generator`` so a fixed seed gives
bit-identical patches; pixel math is plain torch and stays differentiable
with respect to the source image.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import PatchTooLarge
from .types import PatchConfig, PatchSet


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def crop_patches(image: torch.Tensor, cfg: PatchConfig, rng, source_id: str = "", seed: int = -1) -> PatchSet:
    """Crop ``cfg.n_crop`` squares of side ``cfg.patch_size`` with uniform origins."""
    _, h, w = image.shape
    s = cfg.patch_size
    if s > min(h, w):
        raise PatchTooLarge(f"patch_size {s} exceeds image side {min(h, w)}")
    gen = as_generator(rng)
    ys = gen.integers(0, h - s + 1, size=cfg.n_crop)
    xs = gen.integers(0, w - s + 1, size=cfg.n_crop)
    patches = torch.stack([image[:, y:y + s, x:x + s] for y, x in zip(ys.tolist(), xs.tolist())])
    return PatchSet(patches, source_id, seed)


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping the four points ``src`` onto ``dst``."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    return np.append(np.linalg.solve(a, b), 1.0).reshape(3, 3)


def perspective_params(side: int, distortion_scale: float, gen: np.random.Generator):
    """Draw (startpoints, endpoints) for one patch.

    Every corner moves inward by an independent uniform amount in
    ``[0, distortion_scale * side / 2]`` along each axis.
    """
    m = side - 1
    start = np.array([[0, 0], [m, 0], [m, m], [0, m]], dtype=np.float64)
    d = gen.uniform(0.0, distortion_scale * side / 2.0, size=(4, 2))
    inward = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
    return start, start + inward * d


def perspective_grid(homographies: np.ndarray, side: int, dtype=torch.float64) -> torch.Tensor:
    """Sampling grid for ``grid_sample`` from per-patch output->input homographies."""
    c = torch.arange(side, dtype=dtype)
    yy, xx = torch.meshgrid(c, c, indexing="ij")
    pts = torch.stack([xx, yy, torch.ones_like(xx)], dim=-1).reshape(-1, 3)
    hom = torch.as_tensor(homographies, dtype=dtype)
    mapped = pts @ hom.transpose(1, 2)
    xy = mapped[..., :2] / mapped[..., 2:3]
    # pixel centres -> normalised coordinates (align_corners=False)
    grid = (2.0 * xy + 1.0) / side - 1.0
    return grid.reshape(-1, side, side, 2)


def augment_patches(patches: PatchSet, cfg: PatchConfig, rng) -> PatchSet:
    """Independent random perspective warp per patch, out-of-frame filled with 0."""
    if not cfg.augment or cfg.distortion_scale == 0 or len(patches) == 0:
        return patches
    gen = as_generator(rng)
    side = patches.side
    homs = []
    for _ in range(len(patches)):
        start, end = perspective_params(side, cfg.distortion_scale, gen)
        # output pixel at an endpoint samples the input at the matching startpoint
        homs.append(_homography(end, start))
    grid = perspective_grid(np.stack(homs), side, dtype=patches.patches.dtype)
    warped = F.grid_sample(patches.patches, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return patches.replace(warped)


def resize_bilinear(batch: torch.Tensor, size: int) -> torch.Tensor:
    """Bilinear resize with half-pixel centres and edge clamping."""
    n = batch.shape[0]
    theta = torch.eye(2, 3, dtype=batch.dtype).unsqueeze(0).expand(n, 2, 3)
    grid = F.affine_grid(theta, (n, batch.shape[1], size, size), align_corners=False)
    return F.grid_sample(batch, grid, mode="bilinear", padding_mode="border", align_corners=False)


def prepare_for_embedding(patches: PatchSet, cfg: PatchConfig) -> PatchSet:
    if patches.side == cfg.embed_size or len(patches) == 0:
        return patches
    return patches.replace(resize_bilinear(patches.patches, cfg.embed_size))


def sample_patches(image: torch.Tensor, cfg: PatchConfig, seed: int, source_id: str = "") -> PatchSet:
    """crop -> augment -> resize, all draws from one generator seeded by ``seed``."""
    gen = np.random.default_rng(seed)
    ps = crop_patches(image, cfg, gen, source_id=source_id, seed=seed)
    ps = augment_patches(ps, cfg, gen)
    return prepare_for_embedding(ps, cfg)
