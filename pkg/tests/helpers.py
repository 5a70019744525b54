"""Shared builders for the test-suite."""

import numpy as np
import torch

from mmist.orchestrator import StyleConfigs
from mmist.styleloss import LossConfig
from mmist.transfer import StyleFeatures
from mmist.types import BoostConfig, ImageRef, InversionConfig, PatchConfig, StyleSpec, TextRef

WORDS = ["oil", "painting", "watercolor", "fire", "ice", "neon", "sunset", "forest", "ocean", "gold",
         "night", "desert", "pastel", "sketch", "charcoal", "mosaic", "cubism", "velvet", "rust", "jade"]


def rand_image(seed, size=512, smooth=True):
    """Random image in [0, 1]; smooth ones are upsampled from an 8x8 grid."""
    g = torch.Generator().manual_seed(seed)
    if not smooth:
        return torch.rand(3, size, size, generator=g, dtype=torch.float64)
    low = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64)
    return torch.nn.functional.interpolate(low, size=(size, size), mode="bilinear", align_corners=False)[0]


def rand_spec(seed, n_text=None, n_image=None, image_pool=None):
    rng = np.random.default_rng(seed)
    n_text = int(rng.integers(0, 3)) if n_text is None else n_text
    n_image = int(rng.integers(0 if n_text else 1, 3)) if n_image is None else n_image
    texts = tuple(TextRef(" ".join(rng.choice(WORDS, size=int(rng.integers(1, 3)), replace=False)),
                          float(rng.uniform(0.1, 5.0))) for _ in range(n_text))
    images = []
    for k in range(n_image):
        img = image_pool[int(rng.integers(len(image_pool)))] if image_pool else rand_image(seed * 31 + k)
        images.append(ImageRef(img, float(rng.uniform(0.1, 5.0)), f"ref{k}"))
    return StyleSpec(texts, tuple(images))


def small_configs(seed=0, n_crop=4, iterations=3, candidates=2, n_styles=2, **kw):
    return StyleConfigs(
        PatchConfig(n_crop=n_crop),
        InversionConfig(iterations=iterations, init_candidates=candidates, rng_seed=seed),
        BoostConfig(n_styles=n_styles),
        LossConfig(),
        **kw,
    )


def descent_suite(backends, n_specs=20, seed=2024):
    """Fixed-patch default-budget inversions on random single-text specs.

    Returns ``(rows, seconds)``; each row is ``(text, init_loss, final_loss, per_step)``.
    """
    import time

    from mmist.inversion import invert
    from mmist.types import normalize_weights

    rng = np.random.default_rng(seed)
    rows = []
    t0 = time.perf_counter()
    for _ in range(n_specs):
        words = " ".join(rng.choice(WORDS, size=int(rng.integers(1, 3)), replace=False))
        spec = normalize_weights(StyleSpec((TextRef(words),)))
        cfg = InversionConfig(rng_seed=int(rng.integers(2**31)), fixed_patches=True)
        rep, trace = invert(spec, cfg, PatchConfig(n_crop=8), LossConfig(), backends)
        rows.append((words, trace.init_loss, rep.final_loss, [v for _, v in trace.per_step]))
    return rows, time.perf_counter() - t0


def dense_oracle(content, keys, values):
    """Explicit per-position softmax and weighted sums in numpy."""
    c = content.shape[0]
    x = content.reshape(c, -1).numpy()
    mu = x.mean(axis=1, keepdims=True)
    q = (x - mu) / np.sqrt(x.var(axis=1, keepdims=True) + 1e-5)
    k, v = keys.numpy(), values.numpy()
    m_out = np.zeros_like(x)
    s_out = np.zeros_like(x)
    for i in range(x.shape[1]):
        logits = np.array([sum(q[ch, i] * k[ch, j] for ch in range(c)) for j in range(k.shape[1])]) / np.sqrt(c)
        a = np.exp(logits - logits.max())
        a /= a.sum()
        for ch in range(c):
            m = sum(a[j] * v[ch, j] for j in range(k.shape[1]))
            m_out[ch, i] = m
            s_out[ch, i] = np.sqrt(max(sum(a[j] * v[ch, j] ** 2 for j in range(k.shape[1])) - m * m, 0.0))
    return m_out.reshape(content.shape), s_out.reshape(content.shape)


def rand_feats(seed, n, c, h, w):
    g = torch.Generator().manual_seed(seed)
    return [StyleFeatures((torch.randn(c, h, w, generator=g, dtype=torch.float64),)) for _ in range(n)]
