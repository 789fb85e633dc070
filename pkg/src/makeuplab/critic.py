"""Multi-scale patch discriminator with hinge objectives."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm

from .errors import ShapeError

N_SCALES = 2
BASE_WIDTH = 64


class _ScaleCritic(nn.Module):
    """Three stride-2 SN convolutions then a 1-channel patch head."""

    def __init__(self, base_width: int = BASE_WIDTH):
        super().__init__()
        widths = [base_width, base_width * 2, base_width * 4]
        layers = []
        cin = 3
        for w in widths:
            layers.append(spectral_norm(nn.Conv2d(cin, w, 4, stride=2, padding=1),
                                        n_power_iterations=5))
            cin = w
        self.convs = nn.ModuleList(layers)
        self.head = spectral_norm(nn.Conv2d(cin, 1, 3, padding=1), n_power_iterations=5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        return self.head(h)


class PatchCritic(nn.Module):
    """Scores an image at full and half resolution; returns one grid per scale."""

    def __init__(self, n_scales: int = N_SCALES, base_width: int = BASE_WIDTH):
        super().__init__()
        self.scales = nn.ModuleList(_ScaleCritic(base_width) for _ in range(n_scales))

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        if img.dim() != 4 or img.shape[1] != 3:
            raise ShapeError(f"critic expects (1,3,H,W), got {tuple(img.shape)}")
        outputs = []
        current = img
        for scale in self.scales:
            outputs.append(scale(current))
            current = F.avg_pool2d(current, 2)
        return outputs


def hinge_d_loss(real_scores: list[torch.Tensor], fake_scores: list[torch.Tensor]) -> torch.Tensor:
    """-E[min(0,-1+D(real))] - E[min(0,-1-D(fake))], averaged over scales and patches."""
    if len(real_scores) != len(fake_scores):
        raise ShapeError("real/fake score lists differ in length")
    terms = []
    for real, fake in zip(real_scores, fake_scores):
        terms.append(F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean())
    return torch.stack(terms).mean()


def hinge_g_loss(fake_scores: list[torch.Tensor]) -> torch.Tensor:
    """-E[D(fake)] averaged over scales and patches."""
    return -torch.stack([fake.mean() for fake in fake_scores]).mean()
