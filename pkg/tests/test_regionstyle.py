import numpy as np
import pytest
import torch

from makeuplab import imagecore, regionstyle
from makeuplab.errors import ShapeError
from makeuplab.regionstyle import (NORM_EPS, STYLE_DIM, RegionNorm, StyleEncoder,
                                   broadcast, encode_styles)


def masks_from_labels(labels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(
        np.stack([imagecore.region_mask(labels, r) for r in imagecore.REGIONS]))


def masked_mean_oracle(proj: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-region masked average via explicit loops."""
    d = proj.shape[0]
    out = np.zeros((d, 3))
    flat_p = proj.reshape(d, -1)
    flat_m = masks.reshape(3, -1)
    for r in range(3):
        total = flat_m[r].sum()
        if total < 1e-6:
            continue
        for c in range(d):
            out[c, r] = float((flat_p[c] * flat_m[r]).sum() / total)
    return out


class TestStyleEncoder:
    def test_shape(self):
        enc = StyleEncoder()
        st = enc(torch.randn(1, 128, 8, 8), torch.rand(3, 8, 8))
        assert st.shape == (STYLE_DIM, 3)

    def test_constant_features_pool_to_projection(self):
        enc = StyleEncoder(in_channels=4, style_dim=8)
        feats = torch.ones(1, 4, 6, 6)
        masks = torch.zeros(3, 6, 6)
        masks[0, :3] = 1.0
        masks[1, 3:] = 1.0
        st = enc(feats, masks)
        expected = enc.proj(feats)[0, :, 0, 0]
        assert torch.allclose(st[:, 0], expected, atol=1e-5)
        assert torch.allclose(st[:, 1], expected, atol=1e-5)

    def test_single_pixel_region(self):
        enc = StyleEncoder(in_channels=4, style_dim=8)
        feats = torch.randn(1, 4, 5, 5)
        masks = torch.zeros(3, 5, 5)
        masks[2, 1, 3] = 1.0
        st = enc(feats, masks)
        expected = enc.proj(feats)[0, :, 1, 3]
        assert torch.allclose(st[:, 2], expected, atol=1e-6)

    def test_empty_region_zero_column(self):
        enc = StyleEncoder(in_channels=4, style_dim=8)
        st = enc(torch.randn(1, 4, 5, 5), torch.zeros(3, 5, 5))
        assert (st == 0).all()

    def test_matches_loop_oracle(self):
        torch.manual_seed(0)
        enc = StyleEncoder(in_channels=8, style_dim=16)
        feats = torch.randn(1, 8, 6, 6)
        labels = np.random.default_rng(0).integers(0, 4, (6, 6))
        masks = masks_from_labels(labels).float()
        st = encode_styles(enc, feats, masks)
        proj = enc.proj(feats)[0].detach().numpy()
        oracle = masked_mean_oracle(proj, masks.numpy())
        assert np.abs(st.detach().numpy() - oracle).max() <= 1e-6

    def test_soft_mask_weighting(self):
        enc = StyleEncoder(in_channels=4, style_dim=8)
        feats = torch.randn(1, 4, 1, 2)
        masks = torch.zeros(3, 1, 2)
        masks[0, 0, 0], masks[0, 0, 1] = 0.25, 0.75
        st = enc(feats, masks)
        proj = enc.proj(feats)[0]
        expected = (0.25 * proj[:, 0, 0] + 0.75 * proj[:, 0, 1]) / 1.0
        assert torch.allclose(st[:, 0], expected, atol=1e-6)

    def test_spatial_mismatch(self):
        enc = StyleEncoder(in_channels=4, style_dim=8)
        with pytest.raises(ShapeError):
            enc(torch.randn(1, 4, 5, 5), torch.zeros(3, 4, 4))


class TestBroadcast:
    def test_hard_masks_paint_columns(self):
        st = torch.arange(6, dtype=torch.float32).reshape(2, 3)
        masks = torch.zeros(3, 2, 2)
        masks[0, 0, 0] = 1.0  # lip
        masks[1, 0, 1] = 1.0  # skin
        masks[2, 1, 0] = 1.0  # eyes
        out = broadcast(st, masks, 2, 2)
        assert torch.equal(out[:, 0, 0], st[:, 0])
        assert torch.equal(out[:, 0, 1], st[:, 1])
        assert torch.equal(out[:, 1, 0], st[:, 2])
        assert (out[:, 1, 1] == 0).all()  # background

    def test_argmax_tie_break_below_half_is_background(self):
        st = torch.ones(4, 3)
        masks = torch.full((3, 2, 2), 0.4)
        out = broadcast(st, masks, 2, 2)
        assert (out == 0).all()

    def test_largest_mask_wins(self):
        st = torch.tensor([[1.0, 2.0, 3.0]])
        masks = torch.zeros(3, 1, 1)
        masks[0], masks[1], masks[2] = 0.6, 0.9, 0.7
        out = broadcast(st, masks, 1, 1)
        assert out[0, 0, 0].item() == 2.0

    def test_resizes_masks(self):
        st = torch.tensor([[5.0, 0.0, 0.0]])
        masks = torch.zeros(3, 4, 4)
        masks[0] = 1.0
        out = broadcast(st, masks, 8, 8)
        assert out.shape == (1, 8, 8) and (out == 5.0).all()

    def test_output_constant_within_region(self):
        torch.manual_seed(1)
        st = torch.randn(16, 3)
        labels = np.random.default_rng(1).integers(0, 4, (6, 6))
        masks = masks_from_labels(labels).float()
        out = broadcast(st, masks, 6, 6)
        for r, name in enumerate(imagecore.REGIONS):
            sel = torch.from_numpy(imagecore.region_mask(labels, name)).bool()
            if sel.any():
                vals = out[:, sel]
                assert torch.allclose(vals, st[:, r].unsqueeze(1).expand_as(vals))


class TestRegionNorm:
    def test_forced_unit_scale_zero_bias_standardizes(self):
        torch.manual_seed(2)
        norm = RegionNorm(channels=4, style_dim=8, hidden=4)
        h = torch.randn(1, 4, 8, 8) * 3 + 5
        out = norm(h, torch.zeros(8, 8, 8), torch.zeros(3, 8, 8),
                   force_alpha=1.0, force_beta=0.0)
        assert out.mean(dim=(2, 3)).abs().max() <= 1e-5
        assert (out.var(dim=(2, 3), unbiased=False) - 1).abs().max() <= 1e-3

    def test_matches_standardization_oracle(self):
        torch.manual_seed(3)
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        h = torch.randn(1, 2, 4, 4)
        out = norm(h, torch.zeros(8, 4, 4), torch.zeros(3, 4, 4),
                   force_alpha=2.0, force_beta=-1.0)
        arr = h.numpy()[0]
        expected = np.zeros_like(arr)
        for c in range(2):
            mu = arr[c].mean()
            var = arr[c].var()
            expected[c] = 2.0 * (arr[c] - mu) / np.sqrt(var + NORM_EPS) - 1.0
        assert np.abs(out.detach().numpy()[0] - expected).max() <= 1e-5

    def test_affine_input_invariance(self):
        # standardization removes per-channel affine rescalings of the input
        torch.manual_seed(4)
        norm = RegionNorm(channels=3, style_dim=8, hidden=4)
        h = torch.randn(1, 3, 6, 6)
        style = torch.randn(8, 6, 6)
        ctx = torch.randn(3, 6, 6)
        a = norm(h, style, ctx)
        b = norm(h * 7.0 + 2.0, style, ctx)
        assert (a - b).abs().max() <= 1e-4

    def test_theta_zero_pins_context_head(self):
        torch.manual_seed(5)
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        with torch.no_grad():
            norm.theta_alpha.fill_(-50.0)  # sigmoid -> 0: style head only
            norm.theta_beta.fill_(-50.0)
        h = torch.randn(1, 2, 4, 4)
        style = torch.randn(8, 4, 4)
        out_a = norm(h, style, torch.zeros(3, 4, 4))
        out_b = norm(h, style, torch.randn(3, 4, 4))
        assert (out_a - out_b).abs().max() <= 1e-5

    def test_theta_one_pins_warped_head(self):
        torch.manual_seed(6)
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        with torch.no_grad():
            norm.theta_alpha.fill_(50.0)
            norm.theta_beta.fill_(50.0)
        h = torch.randn(1, 2, 4, 4)
        ctx = torch.randn(3, 4, 4)
        out_a = norm(h, torch.zeros(8, 4, 4), ctx)
        out_b = norm(h, torch.randn(8, 4, 4), ctx)
        assert (out_a - out_b).abs().max() <= 1e-5

    def test_theta_override(self):
        torch.manual_seed(7)
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        norm.theta_override = 1.0
        h = torch.randn(1, 2, 4, 4)
        ctx = torch.randn(3, 4, 4)
        out_a = norm(h, torch.zeros(8, 4, 4), ctx)
        out_b = norm(h, torch.randn(8, 4, 4), ctx)
        assert (out_a - out_b).abs().max() <= 1e-6
        assert norm.last_theta_alpha == pytest.approx(1.0)

    def test_records_theta_instrumentation(self):
        torch.manual_seed(8)
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        norm(torch.randn(1, 2, 4, 4), torch.randn(8, 4, 4), torch.randn(3, 4, 4))
        assert norm.last_theta_alpha == pytest.approx(0.5)  # sigmoid(0)

    def test_constant_input_bias_map_only(self):
        # constant activations standardize to zero; output equals the bias map
        torch.manual_seed(9)
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        h = torch.full((1, 2, 4, 4), 3.0)
        style = torch.randn(8, 4, 4)
        ctx = torch.randn(3, 4, 4)
        out = norm(h, style, ctx)
        a_w, b_w = norm._heads(norm.w_trunk, norm.w_alpha, norm.w_beta, ctx.unsqueeze(0))
        a_c, b_c = norm._heads(norm.s_trunk, norm.s_alpha, norm.s_beta, style.unsqueeze(0))
        beta = 0.5 * b_w + 0.5 * b_c
        assert (out - beta).abs().max() <= 1e-5

    def test_finite_for_degenerate_inputs(self):
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        out = norm(torch.zeros(1, 2, 4, 4), torch.zeros(8, 4, 4), torch.zeros(3, 4, 4))
        assert torch.isfinite(out).all()

    def test_channel_mismatch(self):
        norm = RegionNorm(channels=4, style_dim=8, hidden=4)
        with pytest.raises(ShapeError):
            norm(torch.randn(1, 2, 4, 4), torch.zeros(8, 4, 4), torch.zeros(3, 4, 4))

    def test_spatial_mismatch(self):
        norm = RegionNorm(channels=2, style_dim=8, hidden=4)
        with pytest.raises(ShapeError):
            norm(torch.randn(1, 2, 4, 4), torch.zeros(8, 2, 2), torch.zeros(3, 4, 4))
