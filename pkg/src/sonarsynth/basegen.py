"""Base-image generation from simulator depth frames and training-set augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imagemodel import (
    BoundingBox,
    ContentEntry,
    DatasetManifest,
    Image,
    load_image,
    save_image,
)

LUMA = np.array([0.299, 0.587, 0.114])


def load_colormap(path=None) -> np.ndarray:
    """Read a 256-line ``R G B`` colormap file into a (256, 3) array in [0, 1].

    With no path, the bundled perceptually uniform ramp is returned.
    """
    if path is None:
        text = resources.files("sonarsynth.data").joinpath("viridis.txt").read_text()
        src = "<bundled viridis>"
    else:
        text = Path(path).read_text()
        src = str(path)
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if len(rows) != 256:
        raise ValueError(f"{src}: colormap needs exactly 256 entries, found {len(rows)}")
    try:
        table = np.array([[int(v) for v in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{src}: colormap entries must be integers") from exc
    if table.shape != (256, 3) or table.min() < 0 or table.max() > 255:
        raise ValueError(f"{src}: each colormap line must be three integers in 0..255")
    return table / 255.0


@dataclass
class BaseGenConfig:
    noise_sigma: float = 0.05
    colormap: str | None = None  # path to a colormap file; None = bundled default
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class AugmentConfig:
    rotation_range: float = 15.0  # degrees, symmetric
    translation_range: float = 0.1  # fraction of image size, symmetric
    scale_range: tuple[float, float] = (0.8, 1.2)
    flip_probability: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        self.scale_range = tuple(float(s) for s in self.scale_range)
        if len(self.scale_range) != 2 or min(self.scale_range) <= 0:
            raise ValueError("scale_range must be two positive bounds")
        if self.scale_range[0] > self.scale_range[1]:
            raise ValueError("scale_range lower bound exceeds upper bound")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")
        if self.rotation_range < 0 or self.translation_range < 0:
            raise ValueError("rotation_range and translation_range must be >= 0")


def normalize_minmax(img: Image) -> Image:
    """Stretch each channel to span [0, 1]. Constant channels become zero."""
    d = img.data
    lo = d.min(axis=(0, 1), keepdims=True)
    hi = d.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (d - lo) / safe, 0.0)
    return Image.clipped(out)


def make_base_image(depth: Image, cfg: BaseGenConfig, colormap: np.ndarray | None = None) -> Image:
    """Colormap a depth frame, add Gaussian noise, clamp and normalize.

    ``colormap`` overrides ``cfg.colormap`` when given (saves re-reading the
    file in batch jobs).
    """
    if depth.channels != 1:
        raise ValueError(f"depth image must be single-channel, got {depth.channels} channels")
    table = load_colormap(cfg.colormap) if colormap is None else colormap
    idx = np.round(depth.data[:, :, 0] * 255.0).astype(np.int64)
    rgb = table[idx]
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.rng_seed)
        rgb = rgb + rng.normal(0.0, cfg.noise_sigma, size=rgb.shape)
    return normalize_minmax(Image.clipped(rgb))


def flip_horizontal(img: Image, boxes=()) -> tuple[Image, list[BoundingBox]]:
    w = img.width
    flipped = [BoundingBox(w - b.x_max, b.y_min, w - b.x_min, b.y_max, b.label) for b in boxes]
    return Image(img.data[:, ::-1, :]), flipped


def affine_matrix(angle: float, scale: float, translation=(0.0, 0.0)) -> np.ndarray:
    """Forward 2x3 map in (x, y) image coordinates, before re-centring.

    A point ``p`` relative to the image centre goes to ``scale * R(angle) p + t``.
    ``angle`` is in degrees; positive turns clockwise on screen since y points down.
    """
    th = math.radians(angle)
    c, s = math.cos(th), math.sin(th)
    a = scale * np.array([[c, -s], [s, c]])
    return np.hstack([a, np.asarray(translation, dtype=float).reshape(2, 1)])


def warp_boxes(boxes, mat: np.ndarray, width: int, height: int) -> list[BoundingBox]:
    """Map boxes through a centred affine map; hull of corners, clamped, empties dropped."""
    centre = np.array([width / 2.0, height / 2.0])
    out = []
    for b in boxes:
        corners = np.array(
            [[b.x_min, b.y_min], [b.x_max, b.y_min], [b.x_min, b.y_max], [b.x_max, b.y_max]]
        )
        moved = (corners - centre) @ mat[:, :2].T + mat[:, 2] + centre
        lo, hi = moved.min(axis=0), moved.max(axis=0)
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            continue
        clamped = BoundingBox(lo[0], lo[1], hi[0], hi[1], b.label).clamp(width, height)
        if clamped is not None:
            out.append(clamped)
    return out


def warp_image(img: Image, mat: np.ndarray) -> Image:
    """Resample ``img`` under a centred affine map (bilinear, zero fill)."""
    h, w = img.height, img.width
    centre = np.array([w / 2.0, h / 2.0])
    inv = np.linalg.inv(mat[:, :2])
    # output pixel centre q = o + 0.5 ; source p = centre + inv (q - centre - t) ; index = p - 0.5
    off_xy = centre - inv @ (centre + mat[:, 2]) + inv @ np.array([0.5, 0.5]) - 0.5
    # scipy works in (row, col) = (y, x) order
    inv_rc = inv[::-1, ::-1]
    off_rc = off_xy[::-1]
    chans = [
        ndimage.affine_transform(
            img.data[:, :, c], inv_rc, offset=off_rc, order=1, mode="constant", cval=0.0
        )
        for c in range(img.channels)
    ]
    return Image.clipped(np.stack(chans, axis=-1))


def affine_warp(img: Image, boxes, angle=0.0, translation=(0.0, 0.0), scale=1.0):
    """Apply a rotation/scale about the image centre followed by a translation in pixels."""
    mat = affine_matrix(angle, scale, translation)
    if np.allclose(mat, affine_matrix(0.0, 1.0)):
        return img, list(boxes)
    return warp_image(img, mat), warp_boxes(boxes, mat, img.width, img.height)


def sample_affine(cfg: AugmentConfig, width: int, height: int, rng: np.random.Generator):
    angle = rng.uniform(-cfg.rotation_range, cfg.rotation_range)
    tx = rng.uniform(-cfg.translation_range, cfg.translation_range) * width
    ty = rng.uniform(-cfg.translation_range, cfg.translation_range) * height
    scale = rng.uniform(*cfg.scale_range)
    return angle, (tx, ty), scale


def augment_affine(img: Image, boxes, cfg: AugmentConfig, rng: np.random.Generator | None = None):
    """Randomly rotate, translate and scale ``img`` and its boxes.

    Draws from ``rng`` when given, otherwise from a fresh generator seeded by
    ``cfg.rng_seed``.
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    angle, t, s = sample_affine(cfg, img.width, img.height, rng)
    return affine_warp(img, boxes, angle=angle, translation=t, scale=s)


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    return Image.clipped(img.data @ LUMA)


def invert(img: Image) -> Image:
    return Image.clipped(1.0 - img.data)


def make_polarity_pair(img: Image) -> tuple[Image, Image]:
    """Grayscale image and its intensity inverse."""
    gray = to_grayscale(img)
    return gray, invert(gray)


def expand_training_set(
    manifest: DatasetManifest, aug: AugmentConfig, copies: int, out_dir
) -> DatasetManifest:
    """Write ``copies`` augmented polarity pairs per content image into ``out_dir``.

    Entry ``i`` draws from a generator seeded with ``aug.rng_seed + i``, so the
    output does not depend on processing order. Style sets are passed through.
    """
    if copies < 0:
        raise ValueError("copies must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, entry in enumerate(manifest.content):
        rng = np.random.default_rng(aug.rng_seed + i)
        src = load_image(entry.path)
        stem = f"{i:05d}_{entry.path.stem}"
        for c in range(copies):
            img, boxes = src, list(entry.boxes)
            if rng.random() < aug.flip_probability:
                img, boxes = flip_horizontal(img, boxes)
            img, boxes = augment_affine(img, boxes, aug, rng=rng)
            gray, inv = make_polarity_pair(img)
            for tag, out in (("gray", gray), ("inv", inv)):
                p = out_dir / f"{stem}_c{c:03d}_{tag}.png"
                save_image(out, p)
                entries.append(ContentEntry(p.resolve(), tuple(boxes)))
    return DatasetManifest(content=entries, styles=[list(s) for s in manifest.styles])

