"""Alternating (T+1)-step training of the StyleBank network."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .featurenet import FeatureBackend, image_to_tensor
from .imagemodel import DatasetManifest, load_image
from .losses import LossConfig, perceptual_loss, reconstruction_loss
from .stylebank import StyleBankNet, config_hash, init_params, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

AUTOENCODER = "autoencoder"
STYLIZE = "stylize"
METRIC_COLUMNS = ("iter", "branch", "L_total", "L_c", "L_s", "L_reg", "L_atki", "L_R")
_CKPT_RE = re.compile(r"^ckpt_(\d+)\.bin$")


@dataclass
class TrainConfig:
    T: int = 2
    batch_size: int = 4
    iterations: int = 1000
    lr: float = 1e-3
    lr_decay: float = 0.9999
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def lr_at(self, iteration: int) -> float:
        """Learning rate for 1-based ``iteration``; the first step uses ``lr``."""
        return self.lr * self.lr_decay ** (iteration - 1)


@dataclass
class TrainingData:
    """Images of a manifest loaded as (C,H,W) float32 tensors."""

    content: list[torch.Tensor]
    styles: list[list[torch.Tensor]]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "TrainingData":
        content = [image_to_tensor(load_image(e.path)) for e in manifest.content]
        styles = [[image_to_tensor(load_image(p)) for p in ps] for ps in manifest.styles]
        return cls(content, styles)

    @property
    def n_styles(self) -> int:
        return len(self.styles)


@dataclass
class MiniBatch:
    content: list[Any]
    style: list[Any]
    style_ids: list[int]
    content_index: list[int] = field(default_factory=list)
    style_index: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.content)


def sample_minibatch(data, batch_size: int, rng: np.random.Generator) -> MiniBatch:
    """Draw content images and (style id, exemplar) pairs uniformly with replacement.

    ``data`` needs ``content`` and ``styles`` sequences, so both a
    :class:`TrainingData` and a :class:`DatasetManifest` work.
    """
    if not len(data.content):
        raise ValueError("cannot sample: no content images")
    if not data.styles or any(len(s) == 0 for s in data.styles):
        raise ValueError("cannot sample: every style set needs at least one image")
    ci = rng.integers(len(data.content), size=batch_size).tolist()
    sid = rng.integers(len(data.styles), size=batch_size).tolist()
    si = [int(rng.integers(len(data.styles[s]))) for s in sid]
    return MiniBatch(
        content=[data.content[i] for i in ci],
        style=[data.styles[s][j] for s, j in zip(sid, si)],
        style_ids=sid,
        content_index=ci,
        style_index=si,
    )


def branch_schedule(iteration: int, T: int) -> str:
    """Autoencoder on every (T+1)-th iteration (1-based), stylize otherwise."""
    if iteration < 1:
        raise ValueError("iterations are 1-based")
    return AUTOENCODER if iteration % (T + 1) == 0 else STYLIZE


def make_optimizer(net: StyleBankNet, cfg: TrainConfig) -> torch.optim.Optimizer:
    # AdamW: decoupled weight decay; skips parameters whose grad is None
    return torch.optim.AdamW(
        net.parameters(),
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
        foreach=False,
    )


def _stylize_loss(net, x, batch, backend, loss_cfg):
    out = net(x, batch.style_ids)
    shapes = {tuple(s.shape) for s in batch.style}
    if len(shapes) == 1:
        total, terms = perceptual_loss(backend, out, x, torch.stack(batch.style), loss_cfg)
        return total, terms
    # mixed style resolutions: per-sample losses, averaged
    parts = [perceptual_loss(backend, out[i], x[i], s, loss_cfg) for i, s in enumerate(batch.style)]
    total = sum(p[0] for p in parts) / len(parts)
    terms = {k: sum(p[1][k] for p in parts) / len(parts) for k in parts[0][1]}
    return total, terms


def train_step(
    net: StyleBankNet,
    optimizer: torch.optim.Optimizer,
    batch: MiniBatch,
    branch: str,
    loss_cfg: LossConfig,
    backend: FeatureBackend | None,
    lr: float,
) -> dict[str, float]:
    """One optimizer update on ``branch``; returns the loss terms as floats.

    Parameters outside the branch's dataflow receive no gradient and are left
    bit-identical.
    """
    optimizer.zero_grad(set_to_none=True)
    x = torch.stack(batch.content)
    if branch == AUTOENCODER:
        loss = reconstruction_loss(x, net(x))
        terms = {"L_R": loss}
    elif branch == STYLIZE:
        if backend is None:
            raise ValueError("stylize branch needs a feature backend")
        loss, terms = _stylize_loss(net, x, batch, backend, loss_cfg)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    for name, v in [*terms.items(), ("L_total", loss)]:
        if not math.isfinite(float(v.detach())):
            raise FloatingPointError(f"non-finite loss term {name}={float(v.detach())} on {branch} branch")
    loss.backward()
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    metrics = {k: float(v.detach()) for k, v in terms.items()}
    metrics["L_total"] = float(loss.detach())
    return metrics


def _optimizer_tensors(net, optimizer) -> dict[str, torch.Tensor]:
    out = {}
    for name, p in net.named_parameters():
        st = optimizer.state.get(p)
        if not st:
            continue
        for key in ("step", "exp_avg", "exp_avg_sq"):
            out[f"optim.{name}.{key}"] = torch.as_tensor(st[key]).clone()
    return out


def _restore_optimizer(net, optimizer, tensors):
    for name, p in net.named_parameters():
        key = f"optim.{name}.step"
        if key in tensors:
            optimizer.state[p] = {
                "step": tensors[key].clone(),
                "exp_avg": tensors[f"optim.{name}.exp_avg"].clone(),
                "exp_avg_sq": tensors[f"optim.{name}.exp_avg_sq"].clone(),
            }


def _fmt(v) -> str:
    return "" if v is None else format(v, ".10g")


def metrics_row(iteration: int, branch: str, m: dict[str, float]) -> list[str]:
    return [str(iteration), branch] + [_fmt(m.get(c)) for c in METRIC_COLUMNS[2:]]


def _resume_key(config: dict) -> dict:
    """Config minus fields that may change between a run and its resumption."""
    key = json.loads(json.dumps(config))
    for name in ("iterations", "checkpoint_every"):
        key.get("train", {}).pop(name, None)
    return key


def latest_checkpoint(out_dir) -> tuple[int, Path] | None:
    found = []
    for p in Path(out_dir).glob("ckpt_*.bin"):
        m = _CKPT_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return max(found) if found else None


def train(
    data,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    backend: FeatureBackend,
    out_dir=None,
    resume: bool = False,
    config: dict | None = None,
    progress: bool = False,
) -> tuple[StyleBankNet, list[dict]]:
    """Run the alternating schedule; returns the network and one metrics dict per iteration.

    ``data`` is a :class:`TrainingData` or a :class:`DatasetManifest`. With
    ``out_dir`` set, ``ckpt_<iter>.bin`` files and ``metrics.csv`` are
    written there; ``resume`` continues from the newest checkpoint.
    """
    if isinstance(data, DatasetManifest):
        data = TrainingData.from_manifest(data)
    if data.n_styles < 1:
        raise ValueError("training needs at least one style set")
    if not data.content:
        raise ValueError("training needs at least one content image")
    if len({tuple(c.shape) for c in data.content}) != 1:
        raise ValueError("content images must all share one size")
    if config is None:
        config = {"train": asdict(train_cfg), "loss": asdict(loss_cfg), "backend": backend.name}
    config = _resume_key(config)
    chash = config_hash(config)

    net = init_params(data.n_styles, seed=train_cfg.seed)
    optimizer = make_optimizer(net, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    start = 0
    rows: list[dict] = []

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    if resume and out_dir is not None and (found := latest_checkpoint(out_dir)):
        start, path = found
        net, extra, meta = load_checkpoint(path)
        if meta.get("config_hash") != chash:
            raise ValueError(f"{path}: checkpoint was written with a different configuration")
        if net.n_styles != data.n_styles:
            raise ValueError(f"{path}: checkpoint has {net.n_styles} styles, data has {data.n_styles}")
        optimizer = make_optimizer(net, train_cfg)
        _restore_optimizer(net, optimizer, extra)
        rng.bit_generator.state = json.loads(meta["rng_state"])
        rows = [r for r in read_metrics(out_dir / "metrics.csv") if r["iter"] <= start]
        log.info("resumed from %s at iteration %d", path, start)

    def checkpoint(it):
        if out_dir is None:
            return
        save_checkpoint(
            out_dir / f"ckpt_{it}.bin",
            net,
            config=config,
            extra_tensors=_optimizer_tensors(net, optimizer),
            extra_meta={
                "iteration": str(it),
                "rng_state": json.dumps(rng.bit_generator.state),
            },
        )

    metrics_fh = None
    writer = None
    if out_dir is not None:
        metrics_fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow(metrics_row(r["iter"], r["branch"], r))
    try:
        if start == 0 and train_cfg.iterations == 0:
            checkpoint(0)
        for it in range(start + 1, train_cfg.iterations + 1):
            branch = branch_schedule(it, train_cfg.T)
            batch = sample_minibatch(data, train_cfg.batch_size, rng)
            m = train_step(net, optimizer, batch, branch, loss_cfg, backend, train_cfg.lr_at(it))
            row = {"iter": it, "branch": branch, **m}
            rows.append(row)
            if writer is not None:
                writer.writerow(metrics_row(it, branch, m))
                metrics_fh.flush()
            if progress and (it % 100 == 0 or it == train_cfg.iterations):
                log.info("iter %d %s L_total=%.5g", it, branch, m["L_total"])
            if (train_cfg.checkpoint_every and it % train_cfg.checkpoint_every == 0) or (
                it == train_cfg.iterations
            ):
                checkpoint(it)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return net, rows


def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV back into dicts (blank cells become absent keys)."""
    path = Path(path)
    if not path.is_file():
        return []
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"iter": int(rec["iter"]), "branch": rec["branch"]}
            for c in METRIC_COLUMNS[2:]:
                if rec.get(c):
                    row[c] = float(rec[c])
            rows.append(row)
    return rows
