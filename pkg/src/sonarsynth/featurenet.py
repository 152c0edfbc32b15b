"""Frozen perceptual feature extractors and Gram matrices.

Two backends are provided:

* ``TestConvBackend`` -- a tiny fixed-seed random conv stack. Fully offline
  and cheap; used by the test suite and desk-scale experiments.
* ``VGG16Backend`` -- VGG-16 ``features`` truncated at relu4_3, with weights
  loaded from a local file (torchvision state-dict layout).
"""

from __future__ import annotations

import torch
from torch import nn

from .imagemodel import Image

__all__ = [
    "FeatureBackend",
    "TestConvBackend",
    "VGG16Backend",
    "make_backend",
    "image_to_tensor",
    "extract_features",
    "gram_matrix",
]


def image_to_tensor(img: Image, dtype=torch.float32) -> torch.Tensor:
    """(H, W, C) image -> (C, H, W) tensor."""
    return torch.from_numpy(img.data.transpose(2, 0, 1).copy()).to(dtype)


def _as_batch(x, dtype=torch.float32) -> torch.Tensor:
    if isinstance(x, Image):
        x = image_to_tensor(x, dtype)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise ValueError(f"expected (C,H,W) or (B,C,H,W) input, got shape {tuple(x.shape)}")
    if x.shape[1] == 1:
        x = x.expand(-1, 3, -1, -1)
    elif x.shape[1] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {x.shape[1]}")
    return x


class FeatureBackend(nn.Module):
    """Base class: ``forward`` returns one activation per tap, in order.

    Parameters never require grad; call sites may still differentiate with
    respect to the input image.
    """

    name = "abstract"
    layer_ids: tuple[str, ...] = ()
    min_size = 1

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True):
        # frozen backends stay in eval mode
        return super().train(False)

    def check_input(self, x: torch.Tensor):
        h, w = x.shape[-2:]
        if h < self.min_size or w < self.min_size:
            raise ValueError(
                f"{self.name}: image {h}x{w} is too small, need at least "
                f"{self.min_size}x{self.min_size}"
            )


class TestConvBackend(FeatureBackend):
    """Two random conv + ReLU layers; taps after each ReLU.

    The first layer has the configured kernel and stride, the second is 3x3
    stride 1 (or 1x1 when ``kernel_size == 1`` so the whole stack keeps a
    single-pixel receptive field).
    """

    name = "test-conv"
    __test__ = False  # not a pytest class despite the name

    def __init__(self, seed: int = 42, kernel_size: int = 3, stride: int = 2, channels=(8, 16)):
        super().__init__()
        self.seed = seed
        self.kernel_size = kernel_size
        self.stride = stride
        gen = torch.Generator().manual_seed(seed)
        k2 = 1 if kernel_size == 1 else 3
        c1, c2 = channels
        self.conv1 = nn.Conv2d(3, c1, kernel_size, stride=stride, padding=kernel_size // 2)
        self.conv2 = nn.Conv2d(c1, c2, k2, stride=1, padding=k2 // 2)
        with torch.no_grad():
            for conv in (self.conv1, self.conv2):
                fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
                bound = (3.0 / fan_in) ** 0.5
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                conv.bias.copy_(torch.rand(conv.bias.shape, generator=gen) * 0.2 - 0.1)
        self.layer_ids = ("relu1", "relu2")
        self.min_size = max(kernel_size // 2 + 1, 1)
        self.freeze()

    def forward(self, x):
        self.check_input(x)
        a = torch.relu(self.conv1(x))
        b = torch.relu(self.conv2(a))
        return [a, b]


_VGG_TAPS = {"relu1_2": 3, "relu2_2": 8, "relu3_3": 15, "relu4_3": 22}


class VGG16Backend(FeatureBackend):
    """VGG-16 feature taps with ImageNet input normalization."""

    name = "pretrained-vgg16"

    def __init__(self, weights_path, taps=("relu1_2", "relu2_2", "relu3_3", "relu4_3")):
        super().__init__()
        from torchvision.models import vgg16

        unknown = [t for t in taps if t not in _VGG_TAPS]
        if unknown:
            raise ValueError(f"unknown VGG-16 taps {unknown}; choose from {list(_VGG_TAPS)}")
        model = vgg16(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            state = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
        last = max(_VGG_TAPS[t] for t in taps)
        self.features = model.features[: last + 1]
        self.features.load_state_dict(
            {k: v for k, v in state.items() if int(k.split(".")[0]) <= last}
        )
        self.taps = tuple(_VGG_TAPS[t] for t in taps)
        self.layer_ids = tuple(taps)
        n_pools = sum(1 for m in self.features if isinstance(m, nn.MaxPool2d))
        self.min_size = 2 ** n_pools
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.freeze()

    def forward(self, x):
        self.check_input(x)
        x = (x - self.mean) / self.std
        out = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.taps:
                out.append(x)
        return out


def make_backend(name: str = "test-conv", seed: int = 42, weights_path=None, **kwargs) -> FeatureBackend:
    if name == "test-conv":
        return TestConvBackend(seed=seed, **kwargs)
    if name == "pretrained-vgg16":
        if not weights_path:
            raise ValueError("pretrained-vgg16 backend requires weights_path")
        return VGG16Backend(weights_path, **kwargs)
    raise ValueError(f"unknown feature backend {name!r}")


def extract_features(backend: FeatureBackend, img) -> list[torch.Tensor]:
    """Feature maps at every tap of ``backend``.

    ``img`` may be an :class:`Image` or a (C,H,W)/(B,C,H,W) tensor; grayscale
    input is replicated to three channels. The batch dimension is kept only if
    the input had one.
    """
    batched = not isinstance(img, Image) and img.dim() == 4
    ref = next(iter(backend.parameters()), None)
    x = _as_batch(img, ref.dtype if ref is not None else torch.float32)
    if ref is not None and x.dtype != ref.dtype:
        x = x.to(ref.dtype)
    feats = backend(x)
    return feats if batched else [f[0] for f in feats]


def gram_matrix(f: torch.Tensor) -> torch.Tensor:
    """``G[a, b] = sum_hw f[a] f[b] / (C H W)`` for (C,H,W) or (B,C,H,W) input."""
    *lead, c, h, w = f.shape
    flat = f.reshape(*lead, c, h * w)
    return flat @ flat.transpose(-1, -2) / (c * h * w)
