import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cocolor import losses as L
from cocolor.losses import LossBreakdown, LossWeights

import oracles

W = LossWeights()


def rand(*shape, seed=0, lo=0.0, hi=1.0):
    g = torch.Generator().manual_seed(seed)
    return lo + (hi - lo) * torch.rand(*shape, generator=g, dtype=torch.float64)


class TestL1:
    def test_equal(self):
        a = rand(2, 3, 8, 8)
        assert L.l1(a, a).item() == 0.0

    def test_offset(self):
        a = rand(2, 3, 8, 8, lo=0.1, hi=0.8)
        assert L.l1(a, a + 0.1).item() == pytest.approx(0.1, abs=1e-6)

    def test_symmetric(self):
        a, b = rand(1, 3, 8, 8, seed=1), rand(1, 3, 8, 8, seed=2)
        assert L.l1(a, b).item() == L.l1(b, a).item()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            L.l1(rand(1, 3, 8, 8), rand(1, 1, 8, 8))


class TestMsSsim:
    def test_identical(self):
        a = rand(2, 3, 32, 32)
        assert L.ms_ssim(a, a).item() == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("side, scales", [(8, 1), (16, 1), (32, 2), (64, 3), (128, 4), (256, 5)])
    def test_scale_count(self, side, scales):
        assert L.ms_ssim_scales(side, side) == scales

    def test_too_small(self):
        with pytest.raises(ValueError):
            L.ms_ssim(rand(1, 1, 7, 7), rand(1, 1, 7, 7))

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for i in range(5):
            a = rng.uniform(size=(3, 64, 64))
            b = np.clip(a + rng.normal(0, 0.1 * (i + 1), a.shape), 0, 1)
            ours = L.ms_ssim(torch.from_numpy(a), torch.from_numpy(b)).item()
            assert ours == pytest.approx(oracles.ms_ssim(a, b), abs=1e-4)

    def test_small_image_matches_oracle(self):
        a = rand(1, 1, 8, 8, seed=3)
        b = (a + 0.05 * rand(1, 1, 8, 8, seed=4)).clamp(0, 1)
        assert L.ms_ssim(a, b).item() == pytest.approx(oracles.ms_ssim(a.numpy(), b.numpy()), abs=1e-4)

    def test_against_tensorflow(self):
        tf = pytest.importorskip("tensorflow")
        rng = np.random.default_rng(1)
        a = rng.uniform(size=(3, 64, 64))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        w = np.array(L.MS_SSIM_WEIGHTS[:3])
        ref = tf.image.ssim_multiscale(
            a.transpose(1, 2, 0)[None], b.transpose(1, 2, 0)[None], max_val=1.0, power_factors=w / w.sum()
        ).numpy()[0]
        assert L.ms_ssim(torch.from_numpy(a), torch.from_numpy(b)).item() == pytest.approx(float(ref), abs=1e-4)

    def test_zero_factor_gradient_is_finite(self):
        a = torch.zeros(1, 1, 16, 16, dtype=torch.float64, requires_grad=True)
        b = rand(1, 1, 16, 16)
        L.ms_ssim(a, b).backward()
        assert torch.isfinite(a.grad).all()


class TestMixLoss:
    def test_identical(self):
        a = rand(1, 3, 32, 32)
        assert L.mix_loss(a, a).item() == pytest.approx(0.0, abs=1e-6)

    def test_weighting(self, monkeypatch):
        monkeypatch.setattr(L, "ms_ssim", lambda a, b: torch.tensor(1.0, dtype=torch.float64))
        a = rand(1, 3, 16, 16, lo=0.1, hi=0.8)
        assert L.mix_loss(a, a + 0.1).item() == pytest.approx(0.016, abs=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nonnegative_and_bounded(self, seed):
        a, b = rand(1, 3, 16, 16, seed=seed), rand(1, 3, 16, 16, seed=seed + 1)
        v = L.mix_loss(a, b).item()
        assert 0.0 <= v <= L.MIX_ALPHA + (1 - L.MIX_ALPHA) * (a - b).abs().max().item() + 1e-12


class TestPairLoss:
    def setup_method(self):
        self.gt_g = rand(2, 3, 8, 8, seed=1, lo=0.1, hi=0.8)
        self.gt_n = rand(2, 3, 8, 8, seed=2, lo=0.1, hi=0.8)

    def test_perfect(self):
        v = L.pair_loss(self.gt_g, self.gt_n, self.gt_n, self.gt_g, self.gt_g, self.gt_n, W)
        assert v.item() == 0.0

    def test_latent_gray_offset(self):
        v = L.pair_loss(self.gt_g, self.gt_n + 0.1, self.gt_n, self.gt_g, self.gt_g, self.gt_n, W)
        assert v.item() == pytest.approx(0.0025, abs=1e-6)

    def test_zero_latent_weights(self):
        w = LossWeights(latent_gray=0.0, latent_nir=0.0)
        off = lambda t: t + 0.05
        v = L.pair_loss(off(self.gt_g), self.gt_g, off(self.gt_n), self.gt_n, self.gt_g, self.gt_n, w)
        direct = L.l1(self.gt_g, off(self.gt_g)) + L.l1(self.gt_n, off(self.gt_n))
        assert v.item() == pytest.approx(direct.item(), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            L.pair_loss(self.gt_g[:1], self.gt_n, self.gt_n, self.gt_g, self.gt_g, self.gt_n, W)


class TestBilateral:
    def test_identical(self):
        a, b = rand(1, 3, 16, 16, seed=1), rand(1, 3, 16, 16, seed=2)
        assert L.bilateral_consistency_loss(a, a, b, b).item() == pytest.approx(0.0, abs=1e-6)

    def test_symmetric(self):
        a, b, c, d = (rand(1, 3, 16, 16, seed=s) for s in range(4))
        v1 = L.bilateral_consistency_loss(a, b, c, d).item()
        v2 = L.bilateral_consistency_loss(b, a, d, c).item()
        assert v1 == pytest.approx(v2, abs=1e-12)

    def test_composition(self):
        a, b, c, d = (rand(2, 3, 32, 32, seed=s) for s in range(4, 8))
        alpha = 0.84
        expected = sum(
            alpha * (1 - oracles.ms_ssim(x.numpy(), y.numpy())) + (1 - alpha) * np.mean(np.abs(x.numpy() - y.numpy()))
            for x, y in ((a, b), (c, d))
        )
        assert L.bilateral_consistency_loss(a, b, c, d).item() == pytest.approx(expected, abs=1e-4)


class TestGan:
    def test_perfect_discriminator(self):
        assert L.gan_loss_D(torch.ones(2, 1, 6, 6), torch.zeros(2, 1, 6, 6)).item() == 0.0

    def test_fooled(self):
        assert L.gan_loss_G(torch.ones(2, 1, 6, 6)).item() == 0.0

    def test_half(self):
        h = torch.full((2, 1, 6, 6), 0.5)
        assert L.gan_loss_D(h, h).item() == pytest.approx(0.5, abs=1e-6)

    def test_non_finite(self):
        bad = torch.tensor([[[[float("nan")]]]])
        with pytest.raises(L.NonFiniteLossError):
            L.gan_loss_G(bad)
        with pytest.raises(L.NonFiniteLossError):
            L.gan_loss_D(bad, torch.zeros(1, 1, 1, 1))


class TestCycleIdentity:
    def test_identity_translators(self):
        g, n = rand(2, 1, 8, 8, seed=1), rand(2, 1, 8, 8, seed=2)
        assert L.cycle_loss(g, g, n, n).item() == 0.0
        assert L.identity_loss(g, g, n, n).item() == 0.0

    def test_cycle_offset(self):
        g, n = rand(2, 1, 8, 8, seed=1, lo=0.1, hi=0.8), rand(2, 1, 8, 8, seed=2)
        assert L.cycle_loss(g + 0.1, g, n, n).item() == pytest.approx(0.1, abs=1e-6)

    def test_identity_offset(self):
        g, n = rand(2, 1, 8, 8, seed=1, lo=0.1, hi=0.8), rand(2, 1, 8, 8, seed=2, lo=0.1, hi=0.8)
        assert L.identity_loss(g + 0.05, g, n - 0.05, n).item() == pytest.approx(0.1, abs=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        a, b, c, d = (rand(1, 1, 8, 8, seed=seed + k) for k in range(4))
        assert L.cycle_loss(a, b, c, d).item() >= 0
        assert L.identity_loss(a, b, c, d).item() >= 0


class TestTranslationTotal:
    ZERO = dict(cyc=0.0, idt=0.0, gan_img_N=0.0, gan_feat_N=0.0, gan_img_G=0.0, gan_feat_G=0.0)

    def test_plugin(self):
        assert L.translation_loss({**self.ZERO, "cyc": 1.0, "idt": 1.0}, W) == pytest.approx(0.11, abs=1e-6)

    def test_zero(self):
        assert L.translation_loss(self.ZERO, W) == 0.0

    def test_linear(self):
        rng = np.random.default_rng(0)
        a = {k: float(v) for k, v in zip(self.ZERO, rng.uniform(size=6))}
        b = {k: float(v) for k, v in zip(self.ZERO, rng.uniform(size=6))}
        ab = {k: 2 * a[k] + 3 * b[k] for k in a}
        assert L.translation_loss(ab, W) == pytest.approx(2 * L.translation_loss(a, W) + 3 * L.translation_loss(b, W))

    def test_missing(self):
        with pytest.raises(KeyError):
            L.translation_loss({"cyc": 1.0}, W)

    def test_total_plugin(self):
        assert L.total_loss(0.11, 0.0025, 0.0, W) == pytest.approx(0.135, abs=1e-6)
        assert L.total_loss(0.0, 0.0, 0.0, W) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1))
    def test_total_monotone(self, tran, pair, blt, bump):
        base = L.total_loss(tran, pair, blt, W)
        assert L.total_loss(tran + bump, pair, blt, W) >= base
        assert L.total_loss(tran, pair + bump, blt, W) >= base
        assert L.total_loss(tran, pair, blt + bump, W) >= base

    def test_total_non_finite(self):
        with pytest.raises(L.NonFiniteLossError, match="pair"):
            L.total_loss(0.0, float("nan"), 0.0, W)

    def test_breakdown_decomposition(self):
        rng = np.random.default_rng(3)
        comps = {k: torch.tensor(float(v), dtype=torch.float64) for k, v in zip(self.ZERO, rng.uniform(size=6))}
        pair, blt = torch.tensor(0.3, dtype=torch.float64), torch.tensor(0.7, dtype=torch.float64)
        tran = L.translation_loss(comps, W)
        total = L.total_loss(tran, pair, blt, W)
        bd = LossBreakdown(pair=0.3, blt=0.7, tran=float(tran), total=float(total), **{k: float(v) for k, v in comps.items()})
        assert abs(bd.recompute_total(W) - bd.total) <= 1e-12


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(cyc=-1.0)
    assert LossWeights() == LossWeights(0.1, 0.01, 0.025, 0.025, 10.0, 1.0)
