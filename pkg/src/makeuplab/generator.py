"""Fusion generator: identity encoder, fusion blocks, decoder.

Layouts are named by the number of fusion blocks per resolution stage
from bottom (coarsest) to top, e.g. the default "1-2-2": one block at
1/4 resolution, two at 1/2, two at full, with nearest x2 upsamples
between stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm

from .errors import ConfigurationError, ShapeError
from .regionstyle import STYLE_DIM, RegionNorm, broadcast

LEAKY_SLOPE = 0.2
SN_POWER_ITERATIONS = 5

# Gain applied to the warped-mask union before it gates the output: the
# soft warp spreads mask mass, so the raw union undershoots 1 inside the
# face; x2 saturates facial coverage while leaving unconditioned regions
# near zero.
COVERAGE_GAIN = 2.0

# step sequences per named layout: channel pairs between "up" markers
LAYOUTS: dict[str, list] = {
    "1-2-2": [(256, 256), "up", (256, 128), (128, 128), "up", (128, 64), (64, 64)],
    "1-3-2": [(256, 256), "up", (256, 128), (128, 128), (128, 128), "up", (128, 64), (64, 64)],
    "1-2-3": [(256, 256), "up", (256, 128), (128, 128), "up", (128, 128), (128, 64), (64, 64)],
    "2-2-2": [(256, 256), (256, 256), "up", (256, 128), (128, 128), "up", (128, 64), (64, 64)],
    "0-3-3": ["up", (256, 256), (256, 128), (128, 128), "up", (128, 128), (128, 64), (64, 64)],
    "1-1-2": [(256, 256), "up", (256, 128), "up", (128, 64), (64, 64)],
    "1-2-1": [(256, 256), "up", (256, 128), (128, 128), "up", (128, 64)],
    "0-2-2": ["up", (256, 128), (128, 128), "up", (128, 64), (64, 64)],
    "0-1-2": ["up", (256, 128), "up", (128, 64), (64, 64)],
}


@dataclass
class GeneratorConfig:
    name: str = "1-2-2"
    steps: list = field(default_factory=lambda: list(LAYOUTS["1-2-2"]))
    base_channels: int = 256
    style_dim: int = STYLE_DIM

    @property
    def block_pairs(self) -> list[tuple[int, int]]:
        return [s for s in self.steps if s != "up"]


def build_layout(name: str) -> GeneratorConfig:
    if name not in LAYOUTS:
        raise ValueError(f"unknown layout {name!r}; known: {sorted(LAYOUTS)}")
    return GeneratorConfig(name=name, steps=list(LAYOUTS[name]))


def _validate_chain(cfg: GeneratorConfig) -> None:
    ch = cfg.base_channels
    for step in cfg.steps:
        if step == "up":
            continue
        cin, cout = step
        if cin != ch:
            raise ConfigurationError(
                f"layout {cfg.name!r}: block expects {cin} input channels, chain carries {ch}")
        ch = cout


class Conditioning:
    """Per-resolution style maps and context images derived once per forward.

    ``use_style`` off pins every RegionNorm's mixing coefficient to 1
    (context-only modulation, the no-style ablation).
    """

    def __init__(self, style_matrix: torch.Tensor, warped_masks: torch.Tensor,
                 context_image: torch.Tensor, use_style: bool = True):
        self.style_matrix = style_matrix
        self.warped_masks = warped_masks
        self.context_image = context_image
        self.use_style = use_style
        self._cache: dict[tuple[int, int], tuple[torch.Tensor, torch.Tensor]] = {}
        self._coverage: dict[tuple[int, int], torch.Tensor] = {}

    def at(self, h: int, w: int) -> tuple[torch.Tensor, torch.Tensor]:
        key = (h, w)
        if key not in self._cache:
            style_map = broadcast(self.style_matrix, self.warped_masks, h, w)
            ctx = self.context_image
            if ctx.shape[-2:] != (h, w):
                ctx = F.interpolate(ctx.unsqueeze(0), size=(h, w), mode="bilinear",
                                    align_corners=False).squeeze(0)
            self._cache[key] = (style_map, ctx)
        return self._cache[key]

    def coverage(self, h: int, w: int) -> torch.Tensor:
        """(1, h, w) gate in [0, 1]: where the conditioning reaches the image."""
        key = (h, w)
        if key not in self._coverage:
            union = self.warped_masks.sum(dim=0, keepdim=True).clamp(0.0, 1.0)
            cov = (union * COVERAGE_GAIN).clamp(0.0, 1.0)
            if cov.shape[-2:] != (h, w):
                cov = F.interpolate(cov.unsqueeze(0), size=(h, w), mode="bilinear",
                                    align_corners=False).squeeze(0)
            self._coverage[key] = cov
        return self._coverage[key]


def sn_conv(cin: int, cout: int, kernel: int) -> nn.Conv2d:
    conv = nn.Conv2d(cin, cout, kernel, padding=kernel // 2)
    return spectral_norm(conv, n_power_iterations=SN_POWER_ITERATIONS)


class FusionBlock(nn.Module):
    """Residual block of [region norm -> leaky relu -> SN conv] twice,
    with a normalized 1x1 SN shortcut when channel counts differ."""

    def __init__(self, cin: int, cout: int, style_dim: int = STYLE_DIM):
        super().__init__()
        mid = min(cin, cout)
        self.norm1 = RegionNorm(cin, style_dim)
        self.conv1 = sn_conv(cin, mid, 3)
        self.norm2 = RegionNorm(mid, style_dim)
        self.conv2 = sn_conv(mid, cout, 3)
        self.learned_shortcut = cin != cout
        if self.learned_shortcut:
            self.norm_s = RegionNorm(cin, style_dim)
            self.conv_s = sn_conv(cin, cout, 1)

    def _ran(self, norm: RegionNorm, h: torch.Tensor, cond: Conditioning) -> torch.Tensor:
        style_map, ctx = cond.at(h.shape[-2], h.shape[-1])
        if not cond.use_style:
            prev, norm.theta_override = norm.theta_override, 1.0
            out = norm(h, style_map, ctx)
            norm.theta_override = prev
            return out
        return norm(h, style_map, ctx)

    def forward(self, h: torch.Tensor, cond: Conditioning) -> torch.Tensor:
        out = self.conv1(F.leaky_relu(self._ran(self.norm1, h, cond), LEAKY_SLOPE))
        out = self.conv2(F.leaky_relu(self._ran(self.norm2, out, cond), LEAKY_SLOPE))
        if self.learned_shortcut:
            shortcut = self.conv_s(self._ran(self.norm_s, h, cond))
        else:
            shortcut = h
        return shortcut + out


class IdentityEncoder(nn.Module):
    """Two stride-2 convolutions: 3 -> 128 -> 256 at quarter resolution."""

    def __init__(self, out_channels: int = 256):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 128, 3, stride=2, padding=1)
        self.norm1 = nn.InstanceNorm2d(128)
        self.conv2 = nn.Conv2d(128, out_channels, 3, stride=2, padding=1)
        self.norm2 = nn.InstanceNorm2d(out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"identity encoder expects (1,3,H,W), got {tuple(x.shape)}")
        h = F.leaky_relu(self.norm1(self.conv1(x)), LEAKY_SLOPE)
        return F.leaky_relu(self.norm2(self.conv2(h)), LEAKY_SLOPE)


class FusionGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or build_layout("1-2-2")
        _validate_chain(self.config)
        self.encoder = IdentityEncoder(self.config.base_channels)
        self.stages = nn.ModuleList()
        last = self.config.base_channels
        for step in self.config.steps:
            if step == "up":
                self.stages.append(nn.Upsample(scale_factor=2, mode="nearest"))
            else:
                cin, cout = step
                self.stages.append(FusionBlock(cin, cout, self.config.style_dim))
                last = cout
        self.decoder = sn_conv(last, 3, 3)

    @property
    def fusion_blocks(self) -> list[FusionBlock]:
        return [m for m in self.stages if isinstance(m, FusionBlock)]

    def forward(self, x: torch.Tensor, cond: Conditioning) -> torch.Tensor:
        h = self.encoder(x)
        for stage in self.stages:
            h = stage(h, cond) if isinstance(stage, FusionBlock) else stage(h)
        raw = torch.tanh(self.decoder(F.leaky_relu(h, LEAKY_SLOPE)))
        if self.training:
            return raw
        # Inference-time composition (eval mode only, like dropout): pixels
        # the conditioning cannot reach pass the input through untouched,
        # which makes partial transfer local by construction.  Training
        # sees the raw output — gating the loss starves the correspondence
        # warp of the gradients that sharpen it.
        cov = cond.coverage(x.shape[-2], x.shape[-1]).unsqueeze(0)
        return x + cov * (raw - x)
