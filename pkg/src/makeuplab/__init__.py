"""Controllable makeup transfer on procedurally generated faces.

Spatially aligned, region-adaptive style transfer: a dense-correspondence
warping front end, per-region style encoding with adaptive normalization,
and a residual fusion generator trained adversarially on synthetic
paired face/mask data.
"""

__version__ = "0.1.0"
