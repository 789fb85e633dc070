"""Spatial alignment: feature extraction, dense correspondence, warping.

The x-branch consumes the one-hot source label map (4 channels), the
y-branch the 3-channel reference image.  Cosine similarity between the
mean-centered flattened features gives an N x N correspondence matrix;
a sharpened row softmax turns it into a warping kernel that recombines
reference pixels into source geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

DEFAULT_SHARPNESS = 100.0
COSINE_EPS = 1e-8

# instrumentation: incremented on every correspondence computation
COUNTERS = {"correspondence": 0}


def reset_counters() -> None:
    COUNTERS["correspondence"] = 0


class FeatureExtractor(nn.Module):
    """Three 3x3 conv stages (stride 1-2-1) with instance norm, C=128 at half res."""

    def __init__(self, in_channels: int, width: int = 128):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 64, 3, stride=1, padding=1)
        self.norm1 = nn.InstanceNorm2d(64)
        self.conv2 = nn.Conv2d(64, width, 3, stride=2, padding=1)
        self.norm2 = nn.InstanceNorm2d(width)
        self.conv3 = nn.Conv2d(width, width, 3, stride=1, padding=1)
        self.in_channels = in_channels
        self.width = width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"feature extractor expects (1,{self.in_channels},H,W), got {tuple(x.shape)}")
        h = F.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        h = F.leaky_relu(self.norm2(self.conv2(h)), 0.2)
        return self.conv3(h)


@dataclass
class CorrMatrix:
    """N x N correspondence; raw cosine entries or row-stochastic softened."""

    matrix: torch.Tensor
    kind: str  # "raw" | "softened"
    grid_hw: tuple[int, int]
    sharpness: float | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _flatten_center(f: torch.Tensor) -> torch.Tensor:
    # (1,C,H,W) -> centered (C,N); mean vector taken across positions
    cols = f.flatten(2).squeeze(0)
    return cols - cols.mean(dim=1, keepdim=True)


def correspondence(f_x: torch.Tensor, f_y: torch.Tensor) -> CorrMatrix:
    """Raw cosine-similarity matrix between centered feature columns."""
    if f_x.shape != f_y.shape:
        raise ShapeError(f"feature shapes differ: {tuple(f_x.shape)} vs {tuple(f_y.shape)}")
    COUNTERS["correspondence"] += 1
    h, w = f_x.shape[-2], f_x.shape[-1]
    cx = _flatten_center(f_x)
    cy = _flatten_center(f_y)
    nx = cx.norm(dim=0, keepdim=True) + COSINE_EPS
    ny = cy.norm(dim=0, keepdim=True) + COSINE_EPS
    mat = (cx / nx).t() @ (cy / ny)
    return CorrMatrix(matrix=mat, kind="raw", grid_hw=(h, w))


def soften(corr: CorrMatrix, sharpness: float = DEFAULT_SHARPNESS) -> CorrMatrix:
    """Row-wise softmax of sharpness * C; rows become convex weights."""
    if corr.kind != "raw":
        raise ValueError("soften expects a raw correspondence matrix")
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    mat = torch.softmax(sharpness * corr.matrix, dim=1)
    return CorrMatrix(matrix=mat, kind="softened", grid_hw=corr.grid_hw, sharpness=sharpness)


def transpose_soften(corr: CorrMatrix, sharpness: float = DEFAULT_SHARPNESS) -> CorrMatrix:
    """Row softmax of the transposed raw matrix (reverse-direction kernel)."""
    rev = CorrMatrix(matrix=corr.matrix.t(), kind="raw", grid_hw=corr.grid_hw)
    return soften(rev, sharpness)


def warp(corr: CorrMatrix, source: torch.Tensor) -> torch.Tensor:
    """out(u) = sum_v C(u,v) source(v) for (C,H,W) or (H,W) grids."""
    if corr.kind != "softened":
        raise ValueError("warp requires a softened correspondence matrix")
    h, w = corr.grid_hw
    squeeze = source.dim() == 2
    src = source.unsqueeze(0) if squeeze else source
    if src.shape[-2:] != (h, w):
        raise ShapeError(f"source is {tuple(src.shape[-2:])}, correspondence grid is {(h, w)}")
    flat = src.reshape(src.shape[0], h * w)
    out = flat @ corr.matrix.t()
    out = out.reshape(src.shape[0], h, w)
    return out.squeeze(0) if squeeze else out


@dataclass
class WarpedBundle:
    """Reference content warped into source geometry at correspondence resolution."""

    warped_image: torch.Tensor       # (3, h, w)
    warped_masks: torch.Tensor       # (3, h, w) order (lip, skin, eyes)
    filtered_image: torch.Tensor     # (3, h, w), zero off the warped makeup regions

    @property
    def mask_union(self) -> torch.Tensor:
        return self.warped_masks.sum(dim=0).clamp(0.0, 1.0)


def assemble_bundle(corr: CorrMatrix, ref_image: torch.Tensor, ref_masks: torch.Tensor) -> WarpedBundle:
    """Warp reference image and region masks; filter by the warped-mask union."""
    warped_image = warp(corr, ref_image)
    warped_masks = warp(corr, ref_masks)
    union = warped_masks.sum(dim=0).clamp(0.0, 1.0)
    return WarpedBundle(warped_image=warped_image,
                        warped_masks=warped_masks,
                        filtered_image=warped_image * union.unsqueeze(0))


def unwarped_bundle(ref_image: torch.Tensor, ref_masks: torch.Tensor) -> WarpedBundle:
    """Ablation path: the bundle without spatial alignment (resized inputs only)."""
    union = ref_masks.sum(dim=0).clamp(0.0, 1.0)
    return WarpedBundle(warped_image=ref_image,
                        warped_masks=ref_masks,
                        filtered_image=ref_image * union.unsqueeze(0))


def masks_tensor(labels: np.ndarray, size: int) -> torch.Tensor:
    """(3, size, size) region masks (lip, skin, eyes) nearest-resized from a label map."""
    from . import imagecore

    small = imagecore.resize(labels, size, size, mode="nearest")
    masks = np.stack([imagecore.region_mask(small, r) for r in imagecore.REGIONS])
    return torch.from_numpy(masks)
