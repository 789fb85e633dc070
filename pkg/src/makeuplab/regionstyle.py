"""Region-adaptive normalization: style encoding, broadcast, modulation.

Per-region style codes are pooled from the reference features (after a
learnable 1x1 projection to 256 channels), broadcast over the warped
target layout, and mixed with a warped-image context head into per-pixel
scale/bias maps applied after channel-wise standardization.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

STYLE_DIM = 256
NORM_EPS = 1e-5
EMPTY_REGION_EPS = 1e-6


class StyleEncoder(nn.Module):
    """1x1 projection to the style dimension followed by masked average pooling."""

    def __init__(self, in_channels: int = 128, style_dim: int = STYLE_DIM):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, style_dim, 1)
        self.style_dim = style_dim

    def forward(self, features: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        """Style matrix (style_dim, 3) with columns ordered (lip, skin, eyes)."""
        if masks.shape[-2:] != features.shape[-2:]:
            raise ShapeError(
                f"masks {tuple(masks.shape[-2:])} do not match features {tuple(features.shape[-2:])}")
        proj = self.proj(features).flatten(2).squeeze(0)  # (D, N)
        flat = masks.reshape(masks.shape[0], -1)          # (3, N)
        sums = flat.sum(dim=1)                            # (3,)
        pooled = proj @ flat.t()                          # (D, 3)
        denom = sums.clamp(min=EMPTY_REGION_EPS)
        st = pooled / denom
        return st * (sums >= EMPTY_REGION_EPS).to(st.dtype)


def encode_styles(encoder: StyleEncoder, features: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    return encoder(features, masks)


def broadcast(style_matrix: torch.Tensor, masks: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Paint each region's style column over its mask support.

    A pixel belongs to the region with the largest mask value if that value
    is at least 0.5, otherwise to the background (zero vector).
    """
    if masks.shape[-2:] != (h, w):
        masks = F.interpolate(masks.unsqueeze(0), size=(h, w), mode="bilinear",
                              align_corners=False).squeeze(0)
    maxval, argmax = masks.max(dim=0)
    index = torch.where(maxval >= 0.5, argmax + 1, torch.zeros_like(argmax))
    columns = torch.cat([style_matrix.new_zeros(style_matrix.shape[0], 1), style_matrix], dim=1)
    return columns[:, index.flatten()].reshape(style_matrix.shape[0], h, w)


class RegionNorm(nn.Module):
    """Channel-wise standardization with per-pixel scale/bias mixed from two sources.

    Scale and bias come from a conv head over the warped context image and a
    conv head over the broadcast style map; per-channel sigmoid coefficients
    weight the two sources.  ``theta_override`` pins the mixing coefficient
    (used by the no-style ablation); ``force_alpha``/``force_beta`` bypass
    the heads entirely (used by tests).
    """

    def __init__(self, channels: int, style_dim: int = STYLE_DIM, hidden: int = 128,
                 context_kernel: int = 3, style_kernel: int = 1):
        super().__init__()
        ck, sk = context_kernel, style_kernel
        # trunks carry the spatial context; 1x1 output heads keep the cost
        # tractable on a single CPU core
        self.w_trunk = nn.Conv2d(3, hidden, ck, padding=ck // 2)
        self.w_alpha = nn.Conv2d(hidden, channels, 1)
        self.w_beta = nn.Conv2d(hidden, channels, 1)
        self.s_trunk = nn.Conv2d(style_dim, hidden, sk, padding=sk // 2)
        self.s_alpha = nn.Conv2d(hidden, channels, 1)
        self.s_beta = nn.Conv2d(hidden, channels, 1)
        self.theta_alpha = nn.Parameter(torch.zeros(channels))
        self.theta_beta = nn.Parameter(torch.zeros(channels))
        self.channels = channels
        self.theta_override: float | None = None
        self.last_theta_alpha: float | None = None  # instrumentation

    def _heads(self, trunk: nn.Conv2d, alpha_head: nn.Conv2d, beta_head: nn.Conv2d,
               source: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hid = F.leaky_relu(trunk(source), 0.2)
        return alpha_head(hid), beta_head(hid)

    def forward(self, h: torch.Tensor, style_map: torch.Tensor, context: torch.Tensor,
                force_alpha: torch.Tensor | float | None = None,
                force_beta: torch.Tensor | float | None = None) -> torch.Tensor:
        if h.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {h.shape[1]}")
        if style_map.shape[-2:] != h.shape[-2:] or context.shape[-2:] != h.shape[-2:]:
            raise ShapeError("style map / context spatial size must match the activation")
        mu = h.mean(dim=(2, 3), keepdim=True)
        var = h.var(dim=(2, 3), keepdim=True, unbiased=False)
        normed = (h - mu) / torch.sqrt(var + NORM_EPS)

        if force_alpha is not None and force_beta is not None:
            alpha, beta = force_alpha, force_beta
        else:
            a_w, b_w = self._heads(self.w_trunk, self.w_alpha, self.w_beta, context.unsqueeze(0))
            a_c, b_c = self._heads(self.s_trunk, self.s_alpha, self.s_beta, style_map.unsqueeze(0))
            if self.theta_override is not None:
                t_a = h.new_full((1, self.channels, 1, 1), float(self.theta_override))
                t_b = t_a
            else:
                t_a = torch.sigmoid(self.theta_alpha).reshape(1, -1, 1, 1)
                t_b = torch.sigmoid(self.theta_beta).reshape(1, -1, 1, 1)
            self.last_theta_alpha = float(t_a.detach().mean())
            alpha = t_a * a_w + (1 - t_a) * a_c
            beta = t_b * b_w + (1 - t_b) * b_c
        return alpha * normed + beta
