import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from mmist.backends.instrumented import counting
from mmist.errors import CacheCorruption, ShapeMismatch, StaleCache
from mmist.transfer import (AggregatedStyleFeature, ModuleTransferNet, StyleFeatures, ToyTransferNet,
                            aggregate_styles, attention_weights, attentive_stats, attentive_stats_banks,
                            build_aggregate, channel_normalize, stylized_features, transfer)
from mmist.transfer import attention as attention_mod

from helpers import dense_oracle, rand_feats, rand_image

NET = ToyTransferNet(seed=7)


class TestFeatures:
    def test_pure_and_shapes(self):
        img = rand_image(0)
        a, b = NET.extract_features(img), NET.extract_features(img)
        assert a.shapes() == [(8, 64, 64), (16, 32, 32)]
        assert all(torch.equal(x, y) for x, y in zip(a.per_scale, b.per_scale))

    def test_closed_form(self):
        img = rand_image(1)
        feats = NET.extract_features(img)
        x = img.numpy()
        for f, p, q, out in zip(NET.factors, NET.proj, NET.offset, feats.per_scale):
            s = 512 // f
            pooled = x.reshape(3, s, f, s, f).mean(axis=(2, 4))
            expected = np.tanh(np.einsum("ck,khw->chw", p.numpy(), pooled) + q.numpy()[:, None, None])
            np.testing.assert_allclose(out.numpy(), expected, atol=1e-13)

    def test_descriptor(self):
        assert [d["side"] for d in NET.descriptor()] == [64, 32]


class TestAggregate:
    def test_single(self):
        (f,) = rand_feats(0, 1, 3, 4, 5)
        agg = aggregate_styles([f])
        assert agg.shapes() == [(3, 20)]
        assert torch.equal(agg.values[0], f.per_scale[0].reshape(3, -1))
        assert torch.equal(agg.keys[0], channel_normalize(f.per_scale[0].reshape(3, -1)))

    def test_duplicated(self):
        (f,) = rand_feats(0, 1, 3, 4, 5)
        agg = aggregate_styles([f, f])
        v = f.per_scale[0].reshape(3, -1)
        assert torch.equal(agg.values[0], torch.cat([v, v], dim=1))

    def test_four_styles_lengths(self):
        feats = [NET.extract_features(rand_image(s)) for s in range(4)]
        agg = aggregate_styles(feats)
        assert agg.shapes() == [(8, 4 * 64 * 64), (16, 4 * 32 * 32)]
        assert agg.n_styles == 4

    def test_mismatch(self):
        with pytest.raises(ShapeMismatch):
            aggregate_styles(rand_feats(0, 1, 3, 4, 4) + rand_feats(1, 1, 3, 5, 5))
        with pytest.raises(ShapeMismatch):
            aggregate_styles([])


class TestAttentiveStats:
    def test_single_key_exact(self):
        content = torch.randn(4, 3, 3, dtype=torch.float64)
        v = torch.randn(4, 1, dtype=torch.float64)
        m, s = attentive_stats_banks(content, torch.randn(4, 1, dtype=torch.float64), v)
        assert torch.equal(m, v.reshape(4, 1, 1).expand(4, 3, 3))
        assert torch.all(s == 0)

    def test_equal_keys_hand_value(self):
        content = torch.randn(2, 3, 3, dtype=torch.float64)
        k = torch.tensor([[0.3, 0.3], [-1.0, -1.0]], dtype=torch.float64)
        v = torch.tensor([[1.0, 3.0], [-2.0, 4.0]], dtype=torch.float64)
        m, s = attentive_stats_banks(content, k, v)
        np.testing.assert_allclose(m.numpy(), np.broadcast_to([[[2.0]], [[1.0]]], (2, 3, 3)), atol=1e-15)
        np.testing.assert_allclose(s.numpy(), np.broadcast_to([[[1.0]], [[3.0]]], (2, 3, 3)), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10**6))
    def test_dense_oracle(self, c, h, w, n, seed):
        content = rand_feats(seed, 1, c, h, w)[0].per_scale[0]
        agg = aggregate_styles(rand_feats(seed + 1, n, c, h, w))
        m, s = attentive_stats(content, agg, 0)
        om, os_ = dense_oracle(content, agg.keys[0], agg.values[0])
        np.testing.assert_allclose(m.numpy(), om, atol=1e-6)
        np.testing.assert_allclose(s.numpy(), os_, atol=1e-6)
        assert torch.all(s >= 0)

    def test_rows_sum_to_one(self):
        content = rand_feats(3, 1, 5, 6, 6)[0].per_scale[0]
        agg = aggregate_styles(rand_feats(4, 3, 5, 6, 6))
        a = attention_weights(content, agg.keys[0])
        np.testing.assert_allclose(a.sum(dim=1).numpy(), 1.0, atol=1e-12)

    def test_chunking(self, monkeypatch):
        content = rand_feats(5, 1, 4, 6, 6)[0].per_scale[0]
        agg = aggregate_styles(rand_feats(6, 2, 4, 6, 6))
        full = attentive_stats(content, agg, 0)
        monkeypatch.setattr(attention_mod, "MAX_BLOCK_ELEMENTS", 100)
        chunked = attentive_stats(content, agg, 0)
        # block boundaries only change the BLAS summation order
        np.testing.assert_allclose(chunked[0].numpy(), full[0].numpy(), rtol=0, atol=1e-13)
        np.testing.assert_allclose(chunked[1].numpy(), full[1].numpy(), rtol=0, atol=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 4), st.permutations(range(4)), st.integers(0, 10**6))
    def test_duplication_and_order(self, c, perm, seed):
        feats = rand_feats(seed, 4, c, 4, 4)
        content = rand_feats(seed + 7, 1, c, 4, 4)[0].per_scale[0]
        base = attentive_stats(content, aggregate_styles(feats), 0)
        dup = attentive_stats(content, aggregate_styles(feats + feats), 0)
        shuf = attentive_stats(content, aggregate_styles([feats[i] for i in perm]), 0)
        for other in (dup, shuf):
            np.testing.assert_allclose(other[0].numpy(), base[0].numpy(), atol=1e-6)
            np.testing.assert_allclose(other[1].numpy(), base[1].numpy(), atol=1e-6)

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            attentive_stats_banks(torch.zeros(3, 2, 2), torch.zeros(4, 5), torch.zeros(4, 5))


class TestTransfer:
    def test_self_style_identity(self):
        content = rand_image(2)
        cf = NET.extract_features(content)
        agg = aggregate_styles([cf])
        for feat, out in zip(cf.per_scale, stylized_features(cf, agg)):
            c = feat.shape[0]
            flat = feat.reshape(c, -1)
            m, s = attentive_stats_banks(feat, channel_normalize(flat), flat)
            np.testing.assert_allclose(out.numpy(), (s * channel_normalize(feat) + m).numpy(), atol=1e-12)

    def test_pure_and_isolated(self, counted):
        content, style = rand_image(3), rand_image(4)
        agg = build_aggregate([style], counted.transfer)
        a = transfer(content, agg, counted.transfer)
        b = transfer(content, agg, counted.transfer)
        assert torch.equal(a, b) and a.shape == (3, 512, 512)
        assert 0 <= a.min() and a.max() <= 1
        assert sum(counted.generator.calls.values()) == 0 and sum(counted.embedder.calls.values()) == 0

    def test_stale_identity(self):
        agg = build_aggregate([rand_image(4)], NET)
        with pytest.raises(StaleCache):
            transfer(rand_image(3), agg, ToyTransferNet(seed=8))


class TestContainer:
    def agg(self):
        return build_aggregate([rand_image(5), rand_image(6)], NET)

    def test_round_trip(self):
        agg = self.agg()
        data = agg.to_bytes()
        back = AggregatedStyleFeature.from_bytes(data)
        assert back.to_bytes() == data
        assert back.n_styles == 2 and back.identities == (NET.identity,)
        assert all(torch.equal(x, y) for x, y in zip(agg.values, back.values))

    @pytest.mark.parametrize("mutate", [lambda d: b"XXXXXXXX" + d[8:], lambda d: d[:8] + b"\x09\x00" + d[10:],
                                        lambda d: d[:-8], lambda d: d + b"\x00", lambda d: d[:20]])
    def test_corruption(self, mutate):
        with pytest.raises(CacheCorruption):
            AggregatedStyleFeature.from_bytes(mutate(self.agg().to_bytes()))


class Encoder(torch.nn.Module):
    def forward(self, x):
        return [torch.nn.functional.avg_pool2d(x, 8), torch.nn.functional.avg_pool2d(x, 16)]


class Decoder(torch.nn.Module):
    def forward(self, feats: list[torch.Tensor]):
        return torch.nn.functional.interpolate(feats[0], scale_factor=8.0, mode="nearest")


class TestModuleAdapter:
    def test_torchscript(self, tmp_path):
        torch.jit.script(Encoder()).save(str(tmp_path / "enc.pt"))
        torch.jit.script(Decoder()).save(str(tmp_path / "dec.pt"))
        net = ModuleTransferNet.from_torchscript(tmp_path / "enc.pt", tmp_path / "dec.pt")
        assert net.identity.startswith("module-transfer:")
        feats = net.extract_features(rand_image(0))
        assert feats.shapes() == [(3, 64, 64), (3, 32, 32)]
        out = transfer(rand_image(1), build_aggregate([rand_image(2)], net), net)
        assert out.shape == (3, 512, 512)
