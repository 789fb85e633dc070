"""Procedural generator of paired face images and exact label maps.

Produces two domains of flat-filled cartoon faces: X (no makeup, muted
lip colors) and Y (makeup, vivid lip colors).  Geometry is drawn from a
seed shared across domains so that (seed, X) and (seed, Y) describe the
same face with different palettes.  Pose transforms add controlled
misalignment between samples.
"""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass, field

import numpy as np

from . import imagecore
from .errors import GenerationError

MIN_REGION_PIXELS = 8  # at 64x64; scaled by area for other resolutions


@dataclass
class Ellipse:
    """Axis-aligned ellipse in face-local coordinates (fractions of canvas)."""

    cx: float
    cy: float
    ax: float
    ay: float

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return ((x - self.cx) / self.ax) ** 2 + ((y - self.cy) / self.ay) ** 2 <= 1.0


@dataclass
class FaceSpec:
    face: Ellipse
    face_rot_deg: float
    skin_color: tuple[float, float, float]
    lip: Ellipse
    lip_color: tuple[float, float, float]
    eyes: list[Ellipse]
    eyeshadow: list[Ellipse]
    eye_color: tuple[float, float, float]
    background_color: tuple[float, float, float]
    domain: str = "X"


@dataclass
class PoseTransform:
    rotation_deg: float = 0.0
    translate_x: float = 0.0
    translate_y: float = 0.0
    scale: float = 1.0

    def matrix(self) -> np.ndarray:
        """Forward 3x3 affine in fractional canvas coordinates, about (0.5, 0.5)."""
        t = np.deg2rad(self.rotation_deg)
        c, s = np.cos(t), np.sin(t)
        rot = np.array([[c, -s], [s, c]]) * self.scale
        m = np.eye(3)
        m[:2, :2] = rot
        center = np.array([0.5, 0.5])
        shift = np.array([self.translate_x, self.translate_y])
        m[:2, 2] = center + shift - rot @ center
        return m


def _hsv(h: float, s: float, v: float) -> tuple[float, float, float]:
    return colorsys.hsv_to_rgb(h % 1.0, s, v)


def saturation(rgb: tuple[float, float, float]) -> float:
    return colorsys.rgb_to_hsv(*rgb)[1]


def sample_spec(seed: int, domain: str) -> FaceSpec:
    """Deterministic face spec for (seed, domain); geometry depends on seed only."""
    if domain not in ("X", "Y"):
        raise ValueError(f"domain must be 'X' or 'Y', got {domain!r}")
    geo = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6E0]))
    face = Ellipse(
        cx=0.5 + geo.uniform(-0.03, 0.03),
        cy=0.5 + geo.uniform(-0.03, 0.03),
        ax=geo.uniform(0.28, 0.34),
        ay=geo.uniform(0.34, 0.40),
    )
    rot = geo.uniform(-8.0, 8.0)
    lip = Ellipse(
        cx=face.cx,
        cy=face.cy + face.ay * geo.uniform(0.50, 0.62),
        ax=face.ax * geo.uniform(0.30, 0.42),
        ay=face.ay * geo.uniform(0.10, 0.16),
    )
    eye_dx = face.ax * geo.uniform(0.38, 0.48)
    eye_cy = face.cy - face.ay * geo.uniform(0.18, 0.30)
    eye_ax = face.ax * geo.uniform(0.14, 0.20)
    eye_ay = face.ay * geo.uniform(0.08, 0.12)
    eyes = [
        Ellipse(face.cx - eye_dx, eye_cy, eye_ax, eye_ay),
        Ellipse(face.cx + eye_dx, eye_cy, eye_ax, eye_ay),
    ]
    pad = geo.uniform(1.25, 1.45)
    eyeshadow = [Ellipse(e.cx, e.cy, e.ax * pad, e.ay * pad) for e in eyes]

    col = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0105, 1 if domain == "Y" else 0]))
    if domain == "Y":
        lip_color = _hsv(col.uniform(0.90, 1.05), col.uniform(0.62, 0.95), col.uniform(0.55, 0.90))
        eye_color = _hsv(col.uniform(0.45, 0.80), col.uniform(0.55, 0.90), col.uniform(0.45, 0.85))
        skin_color = _hsv(col.uniform(0.05, 0.10), col.uniform(0.25, 0.45), col.uniform(0.65, 0.90))
    else:
        lip_color = _hsv(col.uniform(0.02, 0.10), col.uniform(0.05, 0.28), col.uniform(0.55, 0.80))
        eye_color = _hsv(col.uniform(0.05, 0.12), col.uniform(0.05, 0.25), col.uniform(0.35, 0.60))
        skin_color = _hsv(col.uniform(0.05, 0.10), col.uniform(0.10, 0.25), col.uniform(0.65, 0.90))
    background = _hsv(col.uniform(0.0, 1.0), col.uniform(0.0, 0.15), col.uniform(0.15, 0.45))
    return FaceSpec(
        face=face,
        face_rot_deg=rot,
        skin_color=skin_color,
        lip=lip,
        lip_color=lip_color,
        eyes=eyes,
        eyeshadow=eyeshadow,
        eye_color=eye_color,
        background_color=background,
        domain=domain,
    )


def sample_pose(rng: np.random.Generator, misalign: bool = True) -> PoseTransform:
    if not misalign:
        return PoseTransform()
    return PoseTransform(
        rotation_deg=rng.uniform(-20.0, 20.0),
        translate_x=rng.uniform(-0.1, 0.1),
        translate_y=rng.uniform(-0.1, 0.1),
        scale=rng.uniform(0.9, 1.1),
    )


def _face_frame_points(spec: FaceSpec, pose: PoseTransform) -> np.ndarray:
    """Face-ellipse boundary points mapped through face rotation and pose."""
    t = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    pts = np.stack([spec.face.ax * np.cos(t), spec.face.ay * np.sin(t)])
    phi = np.deg2rad(spec.face_rot_deg)
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    pts = rot @ pts + np.array([[spec.face.cx], [spec.face.cy]])
    m = pose.matrix()
    return m[:2, :2] @ pts + m[:2, 2:3]


def render(spec: FaceSpec, pose: PoseTransform, resolution: int = imagecore.DEFAULT_RESOLUTION,
           texture_noise: float = 0.0, noise_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a spec under a pose into (Image, LabelMap).

    No anti-aliasing: each pixel center is classified exactly, so labels and
    colors agree pixel for pixel.  Optional low-amplitude noise texture is
    added to the image only (labels stay exact).
    """
    boundary = _face_frame_points(spec, pose)
    if boundary.min() < 0.0 or boundary.max() > 1.0:
        raise GenerationError("pose pushes the face outside the canvas")

    # pixel centers in fractional coordinates, mapped through inverse pose
    # and inverse face rotation so shapes are evaluated in face-local frame
    ii = (np.arange(resolution) + 0.5) / resolution
    xg, yg = np.meshgrid(ii, ii)  # x = column fraction, y = row fraction
    inv = np.linalg.inv(pose.matrix())
    px = inv[0, 0] * xg + inv[0, 1] * yg + inv[0, 2]
    py = inv[1, 0] * xg + inv[1, 1] * yg + inv[1, 2]
    phi = np.deg2rad(spec.face_rot_deg)
    c, s = np.cos(phi), np.sin(phi)
    rx = c * (px - spec.face.cx) + s * (py - spec.face.cy) + spec.face.cx
    ry = -s * (px - spec.face.cx) + c * (py - spec.face.cy) + spec.face.cy

    labels = np.zeros((resolution, resolution), dtype=np.int64)
    labels[spec.face.contains(rx, ry)] = imagecore.LABEL_SKIN
    labels[spec.lip.contains(rx, ry)] = imagecore.LABEL_LIP
    for e in spec.eyeshadow + spec.eyes:
        labels[e.contains(rx, ry)] = imagecore.LABEL_EYES

    palette = np.array([
        spec.background_color,
        spec.skin_color,
        spec.lip_color,
        spec.eye_color,
    ], dtype=np.float32)
    img_unit = palette[labels].transpose(2, 0, 1)
    if texture_noise > 0.0:
        noise_rng = np.random.default_rng(noise_seed)
        img_unit = np.clip(img_unit + noise_rng.normal(0.0, texture_noise, img_unit.shape), 0.0, 1.0)
    img = imagecore.from_unit(img_unit.astype(np.float32))
    return img, labels


def min_region_pixels(resolution: int) -> int:
    return max(1, int(round(MIN_REGION_PIXELS * (resolution / 64) ** 2)))


def _regions_ok(labels: np.ndarray, resolution: int) -> bool:
    need = min_region_pixels(resolution)
    return all(
        int((labels == lab).sum()) >= need
        for lab in (imagecore.LABEL_SKIN, imagecore.LABEL_LIP, imagecore.LABEL_EYES)
    )


def render_sample(seed: int, domain: str, resolution: int, misalign: bool = True,
                  texture_noise: float = 0.0) -> tuple[np.ndarray, np.ndarray, FaceSpec, PoseTransform]:
    """Render one valid sample, rejection-resampling degenerate geometry/poses."""
    for attempt in range(64):
        sub_seed = int(seed) * 97 + attempt
        spec = sample_spec(sub_seed, domain)
        pose_rng = np.random.default_rng(np.random.SeedSequence([sub_seed, 0x905E]))
        pose = sample_pose(pose_rng, misalign=misalign)
        try:
            img, labels = render(spec, pose, resolution, texture_noise=texture_noise, noise_seed=sub_seed)
        except GenerationError:
            continue
        if _regions_ok(labels, resolution):
            return img, labels, spec, pose
    raise GenerationError(f"no valid sample for seed={seed} domain={domain} after 64 attempts")


@dataclass
class ManifestEntry:
    sample_id: str
    domain: str
    image_path: str
    mask_path: str
    seed: int

    def row(self) -> str:
        return "\t".join([self.sample_id, self.domain, self.image_path, self.mask_path, str(self.seed)])


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: str = "."

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(e.row() + "\n")

    @classmethod
    def read(cls, path: str) -> "Manifest":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                sample_id, domain, image_path, mask_path, seed = line.split("\t")
                entries.append(ManifestEntry(sample_id, domain, image_path, mask_path, int(seed)))
        return cls(entries=entries, root=os.path.dirname(os.path.abspath(path)))

    def by_domain(self, domain: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.domain == domain]


def split_of(index_in_domain: int, n_domain: int) -> str:
    """Deterministic 80/20 split: the last ceil(n/5) ids of each domain are test."""
    n_test = (n_domain + 4) // 5
    return "test" if index_in_domain >= n_domain - n_test else "train"


def generate_dataset(n_pairs: int, seed: int, out_dir: str,
                     resolution: int = imagecore.DEFAULT_RESOLUTION,
                     misalign: bool = True, texture_noise: float = 0.0) -> Manifest:
    """Write n_pairs samples per domain plus a tab-separated manifest."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    manifest = Manifest(root=os.path.abspath(out_dir))
    for domain in ("X", "Y"):
        for i in range(n_pairs):
            sample_seed = int(seed) * 1_000_003 + (0 if domain == "X" else 500_009) + i
            img, labels, _, _ = render_sample(sample_seed, domain, resolution,
                                              misalign=misalign, texture_noise=texture_noise)
            sample_id = f"{domain}_{i:04d}"
            image_path = os.path.join("images", f"{sample_id}.png")
            mask_path = os.path.join("masks", f"{sample_id}_mask.png")
            imagecore.save_image(img, os.path.join(out_dir, image_path))
            imagecore.save_label_map(labels, os.path.join(out_dir, mask_path))
            manifest.entries.append(ManifestEntry(sample_id, domain, image_path, mask_path, sample_seed))
    manifest.write(os.path.join(out_dir, "manifest.tsv"))
    return manifest
