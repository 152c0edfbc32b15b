"""
From depth frames to detector-ready images
==========================================

A synthetic depth frame is colormapped, noised and normalized into a base
image. It is then flipped and warped, and split into a grayscale and an
inverted copy. Results are written to ``demo_out/base_images``.
"""

from pathlib import Path

import numpy as np

from sonarsynth.basegen import (
    AugmentConfig,
    BaseGenConfig,
    augment_affine,
    flip_horizontal,
    make_base_image,
    make_polarity_pair,
)
from sonarsynth.imagemodel import save_image
from sonarsynth.synthetic import depth_frame

out = Path("demo_out/base_images")
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)

# a bright blob on a sloping background, with its ground-truth box
depth, box = depth_frame(rng, size=64)
print("depth frame", depth.shape, "box", [round(float(v), 1) for v in box.as_list()])

# colormap lookup, Gaussian noise, clamp, then per-channel min-max stretch
base = make_base_image(depth, BaseGenConfig(noise_sigma=0.05, rng_seed=0))
print("base image", base.shape, "channel ranges",
      [(float(base.data[..., c].min()), float(base.data[..., c].max())) for c in range(3)])

# geometry: the box follows every flip and warp
img, boxes = flip_horizontal(base, [box])
img, boxes = augment_affine(img, boxes, AugmentConfig(rotation_range=20, rng_seed=3))
print("after flip + affine, box", [round(float(v), 1) for v in boxes[0].as_list()] if boxes else "dropped")

# targets may image brighter or darker than the seabed, so keep both polarities
gray, inverted = make_polarity_pair(img)
for name, im in [("depth", depth), ("base", base), ("warped", img), ("gray", gray), ("inverted", inverted)]:
    save_image(im, out / f"{name}.png")
print("wrote", sorted(p.name for p in out.glob("*.png")))
