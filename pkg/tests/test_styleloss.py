import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmist import styleloss
from mmist.backends.toy import ToyEmbedder
from mmist.errors import ConfigError, EmbedderFailure
from mmist.patches import resize_bilinear
from mmist.styleloss import (LossConfig, StyleLoss, get_style_loss, image_patch_loss, patch_directions,
                             source_embedding, text_direction, text_patch_loss, unit_or_zero)
from mmist.types import ImageRef, PatchConfig, PatchSet, StyleSpec, TextRef, normalize_weights

from helpers import rand_image

T = lambda *rows: torch.tensor(rows, dtype=torch.float64)  # noqa: E731
EMB = ToyEmbedder(seed=1)
CFG = LossConfig()
PCFG = PatchConfig(n_crop=4)


def toy_embed_oracle(emb, images):
    """numpy block-average and matrix product."""
    x = images.numpy()
    n, c, s, _ = x.shape
    b = s // emb.grid
    pooled = x.reshape(n, c, emb.grid, b, emb.grid, b).mean(axis=(3, 5)).reshape(n, -1)
    return pooled @ emb.projection.numpy().T + emb.bias.numpy()


class TestCosineTerms:
    def test_parallel_zero(self):
        d = T([1.0, 2.0, -1.0])
        assert text_patch_loss(torch.stack([d, 3 * d]), d).item() == pytest.approx(0.0, abs=1e-15)

    def test_antiparallel_two(self):
        d = T([1.0, 2.0, -1.0])
        assert text_patch_loss(torch.stack([-d, -2 * d]), d).item() == pytest.approx(2.0, abs=1e-15)

    def test_two_term_hand_value(self):
        assert text_patch_loss(T([1, 0], [0, 1]), torch.tensor([1.0, 0.0], dtype=torch.float64)).item() == 0.5

    def test_image_examples(self):
        d = T([1.0, 1.0])
        assert image_patch_loss(torch.cat([d, 2 * d]), torch.cat([d, 5 * d])).item() == pytest.approx(0.0, abs=1e-15)
        assert image_patch_loss(T([1, 0]), T([0, 1])).item() == 1.0
        assert image_patch_loss(T([1, 0], [0, 1]), T([1, 0], [0, 1])).item() == 0.5

    def test_zero_direction_contributes_one(self):
        z = torch.zeros(3, dtype=torch.float64)
        assert text_patch_loss(T([1, 0, 0], [0, 0, 0]), z).item() == 1.0
        assert text_patch_loss(T([0, 0, 0]), T([1, 0, 0])[0]).item() == 1.0
        assert image_patch_loss(T([1e-9, 0, 0]), T([1, 0, 0])).item() == 1.0

    def test_unit_or_zero_threshold(self):
        out = unit_or_zero(T([3, 4], [1e-9, 0], [1e-8, 0]))
        np.testing.assert_allclose(out.numpy(), [[0.6, 0.8], [0, 0], [1, 0]])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (5, 4), elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)),
           st.floats(1e-3, 1e3), st.permutations(range(5)))
    def test_bounded_scale_permutation(self, s, t, k, perm):
        s, t = torch.from_numpy(s), torch.from_numpy(t)
        base = text_patch_loss(s, t).item()
        assert 0.0 <= base <= 2.0 + 1e-12
        assert abs(text_patch_loss(k * s, t).item() - base) <= 1e-9
        assert abs(text_patch_loss(s[list(perm)], t).item() - base) <= 1e-12


class TestDirections:
    def test_same_text_zero(self):
        d = text_direction("a photo", CFG, EMB)
        assert d.shape == (EMB.embed_dim,) and torch.all(d == 0)

    def test_nonzero(self):
        assert text_direction("oil painting", CFG, EMB).norm() > 0.1

    def test_identity_template_raw(self):
        cfg = LossConfig(prompt_templates=("{}",), normalize_embeddings=False)
        d = text_direction("x", cfg, EMB)
        expected = EMB.embed_text(["x"])[0] - EMB.embed_text(["a photo"])[0]
        assert torch.equal(d, expected)

    def test_identity_template_normalized(self):
        cfg = LossConfig(prompt_templates=("{}",))
        d = text_direction("x", cfg, EMB)
        a, b = EMB.embed_text(["x"])[0], EMB.embed_text(["a photo"])[0]
        np.testing.assert_allclose(d.numpy(), (a / a.norm() - b / b.norm()).numpy(), atol=1e-15)

    def test_template_average(self):
        cfg = LossConfig(prompt_templates=("{}", "{} style"), normalize_embeddings=False)
        emb = EMB.embed_text(["oil", "oil style", "a photo", "a photo style"])
        expected = (emb[0] + emb[1]) / 2 - (emb[2] + emb[3]) / 2
        np.testing.assert_allclose(text_direction("oil", cfg, EMB).numpy(), expected.numpy(), atol=1e-15)

    def test_source_patches_cancel(self):
        src = resize_bilinear(CFG.src_image.unsqueeze(0), 224).repeat(3, 1, 1, 1)
        d = patch_directions(PatchSet(src, "s", 0), CFG, EMB)
        assert d.shape == (3, EMB.embed_dim)
        np.testing.assert_allclose(d.numpy(), 0.0, atol=1e-15)

    def test_closed_form(self):
        patches = torch.rand(5, 3, 224, 224, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        d = patch_directions(PatchSet(patches, "p", 0), CFG, EMB)
        e = toy_embed_oracle(EMB, patches)
        s = toy_embed_oracle(EMB, resize_bilinear(CFG.src_image.unsqueeze(0), 224))[0]
        expected = e / np.linalg.norm(e, axis=1, keepdims=True) - s / np.linalg.norm(s)
        np.testing.assert_allclose(d.numpy(), expected, atol=1e-12)

    def test_source_embedded_whole(self):
        s = source_embedding(CFG, EMB)
        o = toy_embed_oracle(EMB, resize_bilinear(CFG.src_image.unsqueeze(0), 224))[0]
        np.testing.assert_allclose(s.numpy(), o / np.linalg.norm(o), atol=1e-13)


class TestStyleLoss:
    def test_single_text(self):
        spec = normalize_weights(StyleSpec((TextRef("oil painting"),)))
        loss = StyleLoss(spec, CFG, PCFG, EMB)
        b = loss(rand_image(1), 5)
        assert b.total == pytest.approx(1000 * b.per_text[0][1], rel=1e-12)

    def test_stubbed_terms(self, monkeypatch):
        monkeypatch.setattr(styleloss, "text_patch_loss", lambda s, t: torch.tensor(0.4, dtype=torch.float64))
        monkeypatch.setattr(styleloss, "image_patch_loss", lambda s, r: torch.tensor(0.8, dtype=torch.float64))
        spec = normalize_weights(StyleSpec((TextRef("a"),), (ImageRef(rand_image(2)),)))
        b = StyleLoss(spec, CFG, PCFG, EMB)(rand_image(1), 0)
        assert b.total == pytest.approx(600.0, rel=1e-15)
        assert b.per_text == [(0, 0.4)] and b.per_image == [(0, 0.8)]

    def test_degenerate_all_zero(self):
        gray = torch.full((3, 512, 512), 0.5, dtype=torch.float64)
        cfg = LossConfig(src_image=gray)
        spec = normalize_weights(StyleSpec((), (ImageRef(gray),)))
        b = StyleLoss(spec, cfg, PatchConfig(n_crop=3, augment=False), EMB)(gray, 0)
        assert b.total == 1000.0

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(0.1, 10), min_size=3, max_size=3), st.integers(0, 1000))
    def test_linear_in_weights(self, ws, seed):
        spec = normalize_weights(StyleSpec((TextRef("fire", ws[0]), TextRef("ice", ws[1])),
                                           (ImageRef(IMAGES[0], ws[2]),)))
        b = get_style_loss(spec, CFG, PCFG, EMB)(IMAGES[1], seed)
        dot = math.fsum(a * l for a, l in zip(spec.weights, [v for _, v in b.per_text + b.per_image]))
        assert b.total == pytest.approx(dot, rel=1e-12)
        assert 0 <= b.total <= 2 * 1000

    def test_reference_seed_independent_of_position(self):
        a, b = IMAGES[0], IMAGES[1]
        s1 = normalize_weights(StyleSpec((), (ImageRef(a, 1.0), ImageRef(b, 2.0))))
        s2 = normalize_weights(StyleSpec((), (ImageRef(b, 2.0), ImageRef(a, 1.0))))
        x = IMAGES[2]
        l1 = StyleLoss(s1, CFG, PCFG, EMB)(x, 3)
        l2 = StyleLoss(s2, CFG, PCFG, EMB)(x, 3)
        assert l1.total == pytest.approx(l2.total, rel=1e-14)
        assert l1.per_image[0][1] == l2.per_image[1][1]

    def test_pixel_gradient(self):
        spec = normalize_weights(StyleSpec((TextRef("sunset", 2.0),), (ImageRef(IMAGES[0]),)))
        loss = StyleLoss(spec, CFG, PatchConfig(n_crop=2), EMB)
        img = IMAGES[1].clone().requires_grad_(True)
        loss(img, 9).total_tensor.backward()
        grad = img.grad.reshape(-1)
        rng = np.random.default_rng(0)
        nz = torch.nonzero(grad.abs() > 1e-12).ravel().numpy()
        picks = np.concatenate([rng.choice(nz, 80, replace=False), rng.integers(0, grad.numel(), 20)])
        h = 1e-4
        flat = IMAGES[1].reshape(-1)
        for idx in picks:
            plus, minus = flat.clone(), flat.clone()
            plus[idx] += h
            minus[idx] -= h
            fd = (loss(plus.reshape(3, 512, 512), 9).total - loss(minus.reshape(3, 512, 512), 9).total) / (2 * h)
            g = grad[idx].item()
            assert abs(g - fd) <= 1e-4 * max(abs(g), abs(fd), 1e-6), (idx, g, fd)

    def test_requires_normalized_spec(self):
        with pytest.raises(ConfigError):
            StyleLoss(StyleSpec((TextRef("a", 3.0),)), CFG, PCFG, EMB)

    def test_embed_size_mismatch(self):
        spec = normalize_weights(StyleSpec((TextRef("a"),)))
        with pytest.raises(ConfigError):
            StyleLoss(spec, CFG, PatchConfig(embed_size=200), EMB)

    def test_loss_cache(self):
        spec = normalize_weights(StyleSpec((TextRef("a"),)))
        assert get_style_loss(spec, CFG, PCFG, EMB) is get_style_loss(spec, CFG, PCFG, EMB)

    def test_embedder_failure(self):
        class Broken(ToyEmbedder):
            def embed_image(self, images):
                return super().embed_image(images) * math.nan

        spec = normalize_weights(StyleSpec((TextRef("a"),)))
        with pytest.raises(EmbedderFailure):
            StyleLoss(spec, CFG, PCFG, Broken())(IMAGES[0], 0)

    @pytest.mark.parametrize("kw", [{"src_text": " "}, {"prompt_templates": ("no slot",)}, {"prompt_templates": ()},
                                    {"src_image": torch.zeros(3, 8, 8)}])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            LossConfig(**kw)


IMAGES = [rand_image(s) for s in (10, 11, 12)]
