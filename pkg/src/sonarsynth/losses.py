"""Training objectives for the stylizing and autoencoder branches.

Every loss takes tensors shaped (C,H,W) or (B,C,H,W) with values in [0, 1]
(``Image`` objects are accepted too) and reduces with a mean, so the weights
in :class:`LossConfig` do not depend on resolution or batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .featurenet import FeatureBackend, extract_features, gram_matrix, image_to_tensor
from .imagemodel import Image

LUMA = (0.299, 0.587, 0.114)


@dataclass
class LossConfig:
    alpha: float = 1.0  # content
    beta: float = 10.0  # style (Gram)
    gamma: float = 1e-5  # total variation
    delta: float = 1.0  # average top-k intensity
    k: int = 50
    content_layer: int = 1
    style_layers: tuple[int, ...] | None = None  # None = every tap

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.style_layers is not None:
            self.style_layers = tuple(int(i) for i in self.style_layers)


def _t(x) -> torch.Tensor:
    return image_to_tensor(x) if isinstance(x, Image) else x


def grayscale(x) -> torch.Tensor:
    """(…, C, H, W) -> (…, H, W) using luma weights; single channels pass through."""
    x = _t(x)
    c = x.shape[-3]
    if c == 1:
        return x[..., 0, :, :]
    if c != 3:
        raise ValueError(f"expected 1 or 3 channels, got {c}")
    w = torch.tensor(LUMA, dtype=x.dtype, device=x.device)
    return torch.einsum("...chw,c->...hw", x, w)


def reconstruction_loss(content, output) -> torch.Tensor:
    content, output = _t(content), _t(output)
    if content.shape != output.shape:
        raise ValueError(f"shape mismatch: {tuple(content.shape)} vs {tuple(output.shape)}")
    return torch.mean((output - content) ** 2)


def content_loss(backend: FeatureBackend, output, content, layer: int = 1) -> torch.Tensor:
    """Mean squared difference of the feature maps at tap ``layer``."""
    f_out = extract_features(backend, _t(output))[layer]
    with torch.no_grad():
        f_c = extract_features(backend, _t(content))[layer]
    if f_out.shape != f_c.shape:
        raise ValueError(f"feature shape mismatch: {tuple(f_out.shape)} vs {tuple(f_c.shape)}")
    return torch.mean((f_out - f_c) ** 2)


def style_loss(backend: FeatureBackend, output, style, layers=None) -> torch.Tensor:
    """Sum over taps of the mean squared Gram-matrix difference.

    The style image may have a different resolution from the output.
    """
    f_out = extract_features(backend, _t(output))
    with torch.no_grad():
        f_s = extract_features(backend, _t(style))
    layers = range(len(f_out)) if layers is None else layers
    total = 0.0
    for l in layers:
        total = total + torch.mean((gram_matrix(f_out[l]) - gram_matrix(f_s[l])) ** 2)
    return total


def tv_regularization(output) -> torch.Tensor:
    """Squared neighbour differences (horizontal + vertical) over the element count."""
    x = _t(output)
    dh = x[..., 1:, :] - x[..., :-1, :]
    dw = x[..., :, 1:] - x[..., :, :-1]
    return (torch.sum(dh**2) + torch.sum(dw**2)) / x.numel()


def top_k_intensities(img, k: int) -> torch.Tensor:
    """The ``k`` largest grayscale values, descending; (k,) or (B, k)."""
    g = grayscale(img)
    flat = g.reshape(*g.shape[:-2], -1)
    n = flat.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} is invalid for an image with {n} pixels")
    return torch.topk(flat, k, dim=-1, largest=True, sorted=True).values


def atki_loss(output, style, k: int) -> torch.Tensor:
    """Mean squared difference between the sorted top-k grayscale intensities.

    Gradients reach only the selected pixels of ``output``. The two images
    may differ in size.
    """
    top_o = top_k_intensities(output, k)
    top_s = top_k_intensities(style, k).detach()
    return torch.mean((top_o - top_s) ** 2)


def perceptual_loss(
    backend: FeatureBackend, output, content, style, cfg: LossConfig
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted sum of content, style, TV and ATKI terms; also returns each term."""
    output, content, style = _t(output), _t(content), _t(style)
    terms = {
        "L_c": content_loss(backend, output, content, cfg.content_layer),
        "L_s": style_loss(backend, output, style, cfg.style_layers),
        "L_reg": tv_regularization(output),
        "L_atki": atki_loss(output, style, cfg.k),
    }
    total = (
        cfg.alpha * terms["L_c"]
        + cfg.beta * terms["L_s"]
        + cfg.gamma * terms["L_reg"]
        + cfg.delta * terms["L_atki"]
    )
    return total, terms
