"""Encoder / StyleBank / decoder network with autoencoder and stylizing branches."""

from __future__ import annotations

import hashlib
import json
import math
import numbers
import os
import struct
from pathlib import Path

import torch
from torch import nn

__all__ = [
    "StyleBankNet",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
FEATURE_CHANNELS = 256


def _conv(cin, cout, k, stride=1):
    # stride-1 layers reflect-pad, strided layers zero-pad
    mode = "reflect" if stride == 1 else "zeros"
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, padding_mode=mode)


def _block(cin, cout, k=3, stride=1):
    return [_conv(cin, cout, k, stride), nn.InstanceNorm2d(cout, affine=True), nn.ReLU()]


class StyleBankNet(nn.Module):
    """Shared encoder and decoder with ``n_styles`` per-style filter banks.

    Layer names follow the checkpoint convention: ``encoder.<i>``,
    ``decoder.<i>`` and ``bank.<style>.<i>``.
    """

    def __init__(self, n_styles: int):
        super().__init__()
        if n_styles < 1:
            raise ValueError("n_styles must be >= 1")
        self.n_styles = n_styles
        self.encoder = nn.Sequential(
            *_block(3, 32, k=9, stride=2),
            *_block(32, 64),
            *_block(64, 128),
            *_block(128, FEATURE_CHANNELS),
        )
        self.bank = nn.ModuleList(
            nn.Sequential(
                *_block(FEATURE_CHANNELS, FEATURE_CHANNELS),
                *_block(FEATURE_CHANNELS, FEATURE_CHANNELS),
            )
            for _ in range(n_styles)
        )
        # stride-1 transposed convs are same-padded convs
        self.decoder = nn.Sequential(
            *_block(FEATURE_CHANNELS, 128),
            *_block(128, 64),
            *_block(64, 32),
            nn.ConvTranspose2d(32, 3, 9, stride=2, padding=4, output_padding=1),
            nn.Sigmoid(),
        )

    @staticmethod
    def _batch(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
        if x.dim() == 3:
            return x.unsqueeze(0), True
        if x.dim() != 4:
            raise ValueError(f"expected (C,H,W) or (B,C,H,W), got shape {tuple(x.shape)}")
        return x, False

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        x, single = self._batch(img)
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        if x.shape[1] != 3:
            raise ValueError(f"encoder expects 3 channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h % 2 or w % 2 or h < 16 or w < 16:
            raise ValueError(f"image height and width must be even and >= 16, got {h}x{w}")
        f = self.encoder(x)
        return f[0] if single else f

    def apply_style(self, f: torch.Tensor, style_id) -> torch.Tensor:
        """Run each sample through its bank.

        ``style_id`` is one index for the whole batch or one per sample.
        """
        x, single = self._batch(f)
        if x.shape[1] != FEATURE_CHANNELS:
            raise ValueError(f"style bank expects {FEATURE_CHANNELS} channels, got {x.shape[1]}")
        ids = [int(style_id)] * x.shape[0] if isinstance(style_id, numbers.Integral) else [int(s) for s in style_id]
        if len(ids) != x.shape[0]:
            raise ValueError(f"got {len(ids)} style ids for a batch of {x.shape[0]}")
        for s in ids:
            if not 0 <= s < self.n_styles:
                raise IndexError(f"style_id {s} out of range for {self.n_styles} styles")
        if len(set(ids)) == 1:
            out = self.bank[ids[0]](x)
        else:
            # instance norm is per-sample, so grouping by style is exact
            parts = {}
            for s in sorted(set(ids)):
                idx = [i for i, v in enumerate(ids) if v == s]
                parts[s] = (idx, self.bank[s](x[idx]))
            order = []
            rows = []
            for s, (idx, y) in parts.items():
                order.extend(idx)
                rows.append(y)
            stacked = torch.cat(rows)
            inv = torch.empty(len(order), dtype=torch.long)
            inv[torch.tensor(order)] = torch.arange(len(order))
            out = stacked[inv]
        return out[0] if single else out

    def decode(self, f: torch.Tensor) -> torch.Tensor:
        x, single = self._batch(f)
        if x.shape[1] != FEATURE_CHANNELS:
            raise ValueError(f"decoder expects {FEATURE_CHANNELS} channels, got {x.shape[1]}")
        out = self.decoder(x)
        return out[0] if single else out

    def forward(self, img: torch.Tensor, style_id=None) -> torch.Tensor:
        """Autoencoder branch when ``style_id`` is None, else the stylizing branch."""
        f = self.encode(img)
        if style_id is not None:
            f = self.apply_style(f, style_id)
        return self.decode(f)

    def shared_parameters(self):
        yield from self.encoder.parameters()
        yield from self.decoder.parameters()


def init_params(n_styles: int, seed: int = 0) -> StyleBankNet:
    """Build a network with fan-in scaled uniform weights and identity IN affines."""
    if n_styles < 1:
        raise ValueError("n_styles must be >= 1")
    net = StyleBankNet(n_styles)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, mod in net.named_modules():
            if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d)):
                # ConvTranspose2d weight is (in, out, k, k); fan-in is the source channels
                cin = mod.in_channels
                fan_in = cin * mod.kernel_size[0] * mod.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen) * 2 * bound - bound)
                mod.bias.copy_(torch.rand(mod.bias.shape, generator=gen) * 2 * bound - bound)
            elif isinstance(mod, nn.InstanceNorm2d):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
    return net


def config_hash(config: dict | None) -> str:
    blob = json.dumps(config or {}, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(
    path,
    net: StyleBankNet,
    config: dict | None = None,
    extra_tensors: dict[str, torch.Tensor] | None = None,
    extra_meta: dict[str, str] | None = None,
) -> None:
    """Write a safetensors checkpoint atomically (temp file + rename).

    Parameters are stored under their module names; ``extra_tensors`` (e.g.
    optimizer moments) must not clash with them.
    """
    from safetensors.torch import save_file

    path = Path(path)
    tensors = {k: v.detach().contiguous() for k, v in net.state_dict().items()}
    for k, v in (extra_tensors or {}).items():
        if k in tensors:
            raise KeyError(f"extra tensor {k!r} clashes with a parameter name")
        tensors[k] = v.detach().contiguous()
    meta = {
        "format": "sonarsynth-stylebank",
        "version": str(CHECKPOINT_VERSION),
        "n_styles": str(net.n_styles),
        "config_hash": config_hash(config),
    }
    meta.update(extra_meta or {})
    tmp = path.with_name(path.name + ".tmp")
    save_file(tensors, str(tmp), metadata=meta)
    _canonicalize_header(tmp)
    os.replace(tmp, path)


def _canonicalize_header(path: Path) -> None:
    """Rewrite the JSON header with sorted keys.

    safetensors emits header keys in hash-map order, which varies between
    processes; sorting makes identical checkpoints byte-identical.
    """
    raw = path.read_bytes()
    n = struct.unpack("<Q", raw[:8])[0]
    header = json.loads(raw[8 : 8 + n])
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    text += b" " * (-len(text) % 8)
    path.write_bytes(struct.pack("<Q", len(text)) + text + raw[8 + n :])


def load_checkpoint(path) -> tuple[StyleBankNet, dict[str, torch.Tensor], dict[str, str]]:
    """Return ``(net, extra_tensors, metadata)``."""
    from safetensors import safe_open
    from safetensors.torch import load_file

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with safe_open(str(path), framework="pt") as fh:
        meta = dict(fh.metadata() or {})
    if meta.get("format") != "sonarsynth-stylebank":
        raise ValueError(f"{path}: not a stylebank checkpoint")
    if int(meta.get("version", -1)) > CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {meta['version']} is newer than supported")
    tensors = load_file(str(path))
    net = StyleBankNet(int(meta["n_styles"]))
    own = net.state_dict()
    state = {k: tensors.pop(k) for k in list(own) if k in tensors}
    missing = set(own) - set(state)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)[:5]}")
    net.load_state_dict(state)
    return net, tensors, meta

