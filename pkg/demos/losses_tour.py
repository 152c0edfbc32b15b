"""
What the style losses see
=========================

Two synthetic sonar styles differ mostly in their brightest pixels. A dark
style has a few strong reflectors near 0.95, while a bright style has a
hazy background whose peaks sit near 0.6. The top-k intensity loss
separates them directly. The Gram loss compares texture statistics
from a small frozen conv stack.
"""

import numpy as np

from sonarsynth.featurenet import TestConvBackend, extract_features, gram_matrix, image_to_tensor
from sonarsynth.losses import atki_loss, style_loss, top_k_intensities
from sonarsynth.synthetic import style_exemplar

rng = np.random.default_rng(1)
dark = [image_to_tensor(style_exemplar(rng, "dark")) for _ in range(5)]
bright = [image_to_tensor(style_exemplar(rng, "bright")) for _ in range(5)]

print("top-5 intensities, dark  :", top_k_intensities(dark[0], 5).numpy().round(3))
print("top-5 intensities, bright:", top_k_intensities(bright[0], 5).numpy().round(3))

# ATKI compares sorted intensity lists, so positions do not matter
k = 50
within = np.mean([atki_loss(a, b, k).item() for a in dark for b in dark if a is not b])
across = np.mean([atki_loss(a, b, k).item() for a in dark for b in bright])
print(f"ATKI  dark-dark {within:.2e}   dark-bright {across:.2e}")

backend = TestConvBackend(seed=42)
within = np.mean([style_loss(backend, a, b).item() for a in dark for b in dark if a is not b])
across = np.mean([style_loss(backend, a, b).item() for a in dark for b in bright])
print(f"Gram  dark-dark {within:.2e}   dark-bright {across:.2e}")

# Gram matrices are C x C whatever the image size
feats = extract_features(backend, dark[0])
print("tap shapes", [tuple(f.shape) for f in feats], "-> gram", [tuple(gram_matrix(f).shape) for f in feats])

# ATKI gradients touch only the k selected pixels
x = dark[0].clone().requires_grad_()
atki_loss(x, bright[0], k).backward()
print("pixels with ATKI gradient:", int((x.grad.abs().sum(0) > 0).sum()), "of", x.shape[1] * x.shape[2])
