"""Image / label-map data model and file IO.

Conventions used throughout the package:

* ``Image``: ``float32`` array of shape ``(3, H, W)`` with values in
  ``[-1, 1]`` (network range).  Files are 8-bit RGB PNG.
* ``LabelMap``: ``int64`` array of shape ``(H, W)`` with values in
  ``{0: background, 1: skin, 2: lip, 3: eyes}``.  Files are paletted PNG
  with the fixed 4-entry palette black/green/red/blue.
* ``RegionMask``: ``float32`` array of shape ``(H, W)`` in ``[0, 1]``;
  binary when extracted from a label map, soft after warping.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError

LABEL_BACKGROUND = 0
LABEL_SKIN = 1
LABEL_LIP = 2
LABEL_EYES = 3

REGIONS = ("lip", "skin", "eyes")
REGION_LABELS = {"skin": LABEL_SKIN, "lip": LABEL_LIP, "eyes": LABEL_EYES}

# palette for label-map PNGs: bg=black, skin=green, lip=red, eyes=blue
LABEL_PALETTE = [0, 0, 0, 0, 255, 0, 255, 0, 0, 0, 0, 255]

DEFAULT_RESOLUTION = 64


def to_unit(img: np.ndarray) -> np.ndarray:
    """Map an image from [-1, 1] to [0, 1]."""
    return (img + 1.0) / 2.0


def from_unit(img: np.ndarray) -> np.ndarray:
    """Map an image from [0, 1] to [-1, 1]."""
    return img * 2.0 - 1.0


def encode_bytes(img: np.ndarray) -> np.ndarray:
    """Quantize a [-1, 1] image to uint8 with round-half-up."""
    scaled = (img.astype(np.float64) + 1.0) / 2.0 * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def decode_bytes(raw: np.ndarray) -> np.ndarray:
    """Map uint8 values linearly onto [-1, 1]."""
    return (raw.astype(np.float32) / 255.0) * 2.0 - 1.0


def _pil_to_image(pil: PILImage.Image, resolution: int | None) -> np.ndarray:
    if pil.mode != "RGB":
        raise FormatError(f"expected an RGB raster, got mode {pil.mode!r}")
    arr = np.asarray(pil, dtype=np.uint8)
    img = decode_bytes(arr).transpose(2, 0, 1)
    if resolution is not None and img.shape[1:] != (resolution, resolution):
        img = resize(img, resolution, resolution, mode="bilinear")
    return np.ascontiguousarray(img, dtype=np.float32)


def load_image(path: str, resolution: int | None = DEFAULT_RESOLUTION) -> np.ndarray:
    """Load an 8-bit RGB PNG as a (3, R, R) float32 image in [-1, 1]."""
    try:
        with PILImage.open(path) as pil:
            pil.load()
            return _pil_to_image(pil, resolution)
    except FormatError:
        raise
    except OSError:
        raise
    except Exception as exc:  # Pillow raises assorted types on corrupt data
        raise FormatError(f"cannot decode {path}: {exc}") from exc


def load_image_bytes(data: bytes, resolution: int | None = DEFAULT_RESOLUTION) -> np.ndarray:
    """Decode PNG bytes the same way as :func:`load_image`."""
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:
        raise FormatError(f"cannot decode image bytes: {exc}") from exc
    return _pil_to_image(pil, resolution)


def save_image(img: np.ndarray, path: str) -> None:
    """Write a [-1, 1] image as 8-bit RGB PNG (round-half-up quantization)."""
    raw = encode_bytes(img).transpose(1, 2, 0)
    PILImage.fromarray(raw, mode="RGB").save(path, format="PNG")


def image_png_bytes(img: np.ndarray) -> bytes:
    raw = encode_bytes(img).transpose(1, 2, 0)
    buf = io.BytesIO()
    PILImage.fromarray(raw, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_label_map(labels: np.ndarray, path: str) -> None:
    """Write a label map as a paletted PNG with the fixed 4-entry palette."""
    pil = PILImage.fromarray(labels.astype(np.uint8), mode="P")
    pil.putpalette(LABEL_PALETTE + [0] * (768 - len(LABEL_PALETTE)))
    pil.save(path, format="PNG")


def _pil_to_labels(pil: PILImage.Image) -> np.ndarray:
    if pil.mode != "P":
        raise FormatError(f"label map must be a paletted PNG, got mode {pil.mode!r}")
    palette = pil.getpalette()[:12]
    if palette != LABEL_PALETTE:
        raise FormatError("label map palette does not match the fixed palette")
    labels = np.asarray(pil, dtype=np.int64)
    if not np.isin(labels, [0, 1, 2, 3]).all():
        raise FormatError("label map contains labels outside {0,1,2,3}")
    return labels


def load_label_map(path: str) -> np.ndarray:
    try:
        with PILImage.open(path) as pil:
            pil.load()
            return _pil_to_labels(pil)
    except FormatError:
        raise
    except OSError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot decode {path}: {exc}") from exc


def load_label_map_bytes(data: bytes) -> np.ndarray:
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:
        raise FormatError(f"cannot decode label-map bytes: {exc}") from exc
    return _pil_to_labels(pil)


def label_map_png_bytes(labels: np.ndarray) -> bytes:
    pil = PILImage.fromarray(labels.astype(np.uint8), mode="P")
    pil.putpalette(LABEL_PALETTE + [0] * (768 - len(LABEL_PALETTE)))
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def region_mask(labels: np.ndarray, region: str) -> np.ndarray:
    """Binary mask of one semantic region ('skin' | 'lip' | 'eyes')."""
    if region not in REGION_LABELS:
        raise ValueError(f"unknown region {region!r}; expected one of {sorted(REGION_LABELS)}")
    return (labels == REGION_LABELS[region]).astype(np.float32)


def one_hot(labels: np.ndarray) -> np.ndarray:
    """One-hot encode a label map into a (4, H, W) float32 grid."""
    h, w = labels.shape
    out = np.zeros((4, h, w), dtype=np.float32)
    for k in range(4):
        out[k] = labels == k
    return out


def _bilinear_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel-center sampling, edges clamped
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.clip(np.floor(coords), 0, n_in - 1).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = np.clip(coords - lo, 0.0, 1.0)
    return lo, hi, frac


def _resize_bilinear_2d(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    ylo, yhi, yf = _bilinear_coords(h, grid.shape[0])
    xlo, xhi, xf = _bilinear_coords(w, grid.shape[1])
    g = grid.astype(np.float64)
    top = g[ylo][:, xlo] * (1 - xf) + g[ylo][:, xhi] * xf
    bot = g[yhi][:, xlo] * (1 - xf) + g[yhi][:, xhi] * xf
    return (top * (1 - yf)[:, None] + bot * yf[:, None]).astype(np.float32)


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out)
    return np.clip(np.floor(coords), 0, n_in - 1).astype(np.int64)


def resize(grid: np.ndarray, h: int, w: int, mode: str = "bilinear") -> np.ndarray:
    """Resize an Image (3,H,W), RegionMask (H,W) or LabelMap (H,W).

    Label maps (integer dtype) only support nearest mode so the label set
    is preserved exactly.
    """
    if h < 1 or w < 1:
        raise ValueError("target size must be at least 1x1")
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    is_labels = np.issubdtype(grid.dtype, np.integer)
    if is_labels and mode == "bilinear":
        raise ValueError("bilinear resize is not defined for label maps")
    if mode == "nearest":
        yi = _nearest_index(h, grid.shape[-2])
        xi = _nearest_index(w, grid.shape[-1])
        return grid[..., yi[:, None], xi[None, :]]
    if grid.ndim == 2:
        return _resize_bilinear_2d(grid, h, w)
    return np.stack([_resize_bilinear_2d(c, h, w) for c in grid])
