"""Small synthetic depth frames and sonar-like style exemplars for desk-scale runs.

Real simulator output and field sonar recordings are not bundled; these
generators give images with controlled statistics instead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .basegen import BaseGenConfig, load_colormap, make_base_image
from .imagemodel import BoundingBox, ContentEntry, DatasetManifest, Image, save_image, save_manifest


def _disk(size, cx, cy, r):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def depth_frame(rng: np.random.Generator, size: int = 32) -> tuple[Image, BoundingBox]:
    """Blob on a ramp background, as a single-channel depth image."""
    direction = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    ramp = 0.5 + 0.2 * ((xx - 0.5) * np.cos(direction) + (yy - 0.5) * np.sin(direction))
    r = rng.uniform(0.12, 0.22) * size
    cx, cy = rng.uniform(r + 1, size - r - 1, size=2)
    depth = np.where(_disk(size, cx, cy, r), 0.95, ramp * 0.6)
    box = BoundingBox(cx - r, cy - r, cx + r, cy + r, 0).clamp(size, size)
    return Image.clipped(depth), box


def style_exemplar(rng: np.random.Generator, style: str, size: int = 32) -> Image:
    """Grayscale sonar-like exemplar.

    ``"dark"``: background near 0.08 with 0.02 speckle and a bright reflector
    near 0.95. ``"bright"``: background near 0.4 with 0.1 speckle, so its
    brightest pixels sit around 0.6, and no distinct reflector.
    """
    if style == "dark":
        img = 0.08 + rng.normal(0.0, 0.02, (size, size))
        r = rng.uniform(0.14, 0.2) * size
        cx, cy = rng.uniform(r + 1, size - r - 1, size=2)
        mask = _disk(size, cx, cy, r)
        img[mask] = 0.95 + rng.normal(0.0, 0.02, int(mask.sum()))
    elif style == "bright":
        img = 0.4 + rng.normal(0.0, 0.1, (size, size))
    else:
        raise ValueError(f"unknown synthetic style {style!r}")
    return Image.clipped(img)


def make_desk_dataset(
    out_dir,
    n_content: int = 50,
    n_style: int = 30,
    size: int = 32,
    seed: int = 0,
    base_cfg: BaseGenConfig | None = None,
    styles=("dark", "bright"),
    write_depth: bool = False,
) -> DatasetManifest:
    """Write base images, style exemplars and ``manifest.json`` under ``out_dir``.

    Content entries are already colormapped base images unless
    ``write_depth`` is set, in which case the raw depth frames are listed
    (for feeding the base-image stage yourself).
    """
    out_dir = Path(out_dir)
    (out_dir / "content").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    base_cfg = base_cfg or BaseGenConfig(noise_sigma=0.05, rng_seed=seed)
    table = load_colormap(base_cfg.colormap)
    content = []
    for i in range(n_content):
        depth, box = depth_frame(rng, size)
        img = depth
        if not write_depth:
            cfg = BaseGenConfig(base_cfg.noise_sigma, base_cfg.colormap, base_cfg.rng_seed + i)
            img = make_base_image(depth, cfg, colormap=table)
        p = out_dir / "content" / f"c{i:04d}.png"
        save_image(img, p)
        content.append(ContentEntry(p.resolve(), (box,)))
    style_sets = []
    for s_name in styles:
        d = out_dir / f"style_{s_name}"
        d.mkdir(exist_ok=True)
        paths = []
        for j in range(n_style):
            p = d / f"s{j:04d}.png"
            save_image(style_exemplar(rng, s_name, size), p)
            paths.append(p.resolve())
        style_sets.append(paths)
    manifest = DatasetManifest(content=content, styles=style_sets)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
