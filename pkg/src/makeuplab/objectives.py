"""Non-adversarial loss terms and the histogram-matching pseudo ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import imagecore
from .alignment import CorrMatrix, soften, transpose_soften, warp
from .errors import ShapeError


@dataclass
class LossWeights:
    """Weights for (domain, perceptual, correspondence, makeup, cycle,
    adversarial, identity), in that order."""

    domain: float = 1.0
    perc: float = 0.001
    corr: float = 0.1
    makeup: float = 50.0
    cycle: float = 1.0
    adv: float = 10.0
    id: float = 1.0

    TERM_ORDER = ("domain", "perc", "corr", "makeup", "cycle", "adv", "id")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in self.TERM_ORDER)


class PerceptualNet(nn.Module):
    """Fixed, seeded, frozen feature stack standing in for a pretrained backbone.

    Four stride-2 conv stages (32-64-128-256); the tap is the final stage's
    activation.  Parameters are never updated.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        widths = [32, 64, 128, 256]
        layers = []
        cin = 3
        for w in widths:
            conv = nn.Conv2d(cin, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.zero_()
            layers.append(conv)
            cin = w
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        h = img
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        return h


def domain_loss(f_x: torch.Tensor, f_y: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between the two feature grids."""
    if f_x.shape != f_y.shape:
        raise ShapeError(f"shapes differ: {tuple(f_x.shape)} vs {tuple(f_y.shape)}")
    return (f_x - f_y).abs().mean()


def perceptual_loss(generated: torch.Tensor, source: torch.Tensor, net: PerceptualNet) -> torch.Tensor:
    """Mean squared difference of frozen features."""
    return ((net(generated) - net(source)) ** 2).mean()


def corr_regularization(corr_raw: CorrMatrix, warped_image: torch.Tensor,
                        reference_image: torch.Tensor, sharpness: float = 100.0,
                        mode: str = "transpose") -> torch.Tensor:
    """Cycle-consistency of the correspondence: warp the warped image back
    toward the reference and take the mean absolute error.

    mode "transpose" (default) re-warps with the row-softmaxed transpose;
    mode "as-written" reuses the forward kernel.
    """
    if mode == "transpose":
        kernel = transpose_soften(corr_raw, sharpness)
    elif mode == "as-written":
        kernel = soften(corr_raw, sharpness)
    else:
        raise ValueError(f"unknown corr regularization mode {mode!r}")
    rewarped = warp(kernel, warped_image)
    return (rewarped - reference_image).abs().mean()


def makeup_loss(gen_xy: torch.Tensor, gen_yx: torch.Tensor,
                hm_xy: torch.Tensor, hm_yx: torch.Tensor) -> torch.Tensor:
    """Mean squared distance to the histogram-matched pseudo ground truths."""
    return ((gen_xy - hm_xy.detach()) ** 2).mean() + ((gen_yx - hm_yx.detach()) ** 2).mean()


def cycle_loss(recon_y: torch.Tensor, y: torch.Tensor,
               recon_x: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return (recon_y - y).abs().mean() + (recon_x - x).abs().mean()


def identity_loss(gen_xx: torch.Tensor, x: torch.Tensor,
                  gen_yy: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return (gen_xx - x).abs().mean() + (gen_yy - y).abs().mean()


def total_loss(terms, weights: LossWeights):
    """Weighted sum of the seven terms in fixed order."""
    if len(terms) != 7:
        raise ValueError(f"expected 7 loss terms, got {len(terms)}")
    total = None
    for term, w in zip(terms, weights.as_tuple()):
        contrib = w * term
        total = contrib if total is None else total + contrib
    return total


def _match_region_channel(out_ch: np.ndarray, src_idx: np.ndarray, ref_vals: np.ndarray) -> None:
    src_vals = out_ch[src_idx]
    order = np.argsort(src_vals, kind="stable")  # ties broken by row-major index
    ref_sorted = np.sort(ref_vals, kind="stable")
    n_s, n_r = src_vals.shape[0], ref_sorted.shape[0]
    ranks = np.arange(n_s, dtype=np.int64)
    matched = ref_sorted[(ranks * n_r) // n_s]
    out_ch[src_idx[order]] = matched


def histogram_match(source: np.ndarray, reference: np.ndarray,
                    src_map: np.ndarray, ref_map: np.ndarray) -> np.ndarray:
    """Per-region, per-channel rank-order histogram matching.

    Each makeup region of the source is remapped so its per-channel value
    distribution follows the reference region's empirical distribution;
    background pixels are untouched.  Matching runs in [0, 1] space.
    Empty reference regions leave the source region unchanged.
    """
    if source.shape != reference.shape or src_map.shape != ref_map.shape:
        raise ShapeError("source/reference shapes must agree")
    out = source.astype(np.float32).copy()  # untouched pixels stay bit-identical
    for region in imagecore.REGIONS:
        label = imagecore.REGION_LABELS[region]
        src_idx = np.flatnonzero(src_map.ravel() == label)
        ref_idx = np.flatnonzero(ref_map.ravel() == label)
        if src_idx.size == 0 or ref_idx.size == 0:
            continue
        for c in range(source.shape[0]):
            src_unit = imagecore.to_unit(source[c].astype(np.float64)).ravel()
            ref_vals = imagecore.to_unit(reference[c].astype(np.float64)).ravel()[ref_idx]
            matched = src_unit.copy()
            _match_region_channel(matched, src_idx, ref_vals)
            out[c].reshape(-1)[src_idx] = imagecore.from_unit(matched[src_idx]).astype(np.float32)
    return out
