"""Configuration and the batch commands behind the ``sonarsynth`` CLI.

Each ``cmd_*`` function is usable from Python directly. Every command writes
its fully resolved configuration to ``<out_dir>/config.lock`` before doing any
work; that file can be fed back through ``--config`` to repeat the run.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .basegen import AugmentConfig, BaseGenConfig, expand_training_set, load_colormap, make_base_image
from .detecteval import pr_curve, read_detections, write_pr
from .featurenet import FeatureBackend, image_to_tensor, make_backend
from .imagemodel import (
    ContentEntry,
    DatasetManifest,
    Image,
    load_image,
    load_manifest,
    save_image,
    save_manifest,
)
from .losses import LossConfig, atki_loss, style_loss
from .stylebank import load_checkpoint
from .trainer import TrainConfig, TrainingData, latest_checkpoint, train

log = logging.getLogger(__name__)

SEED_ENV = "SONARSYNTH_SEED"


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""


@dataclass
class BackendConfig:
    name: str = "test-conv"
    seed: int = 42
    weights_path: str | None = None


@dataclass
class PathsConfig:
    manifest: str | None = None
    out_dir: str | None = None


@dataclass
class PipelineConfig:
    basegen: BaseGenConfig = field(default_factory=BaseGenConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    copies: int = 1
    eval_pairs: int | None = None
    eval_seed: int = 0
    # when set, overrides every per-stage seed (basegen, augment, train)
    seed: int | None = None

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if "config" in doc and "command" in doc:
            doc = doc["config"]  # a config.lock file
        return _build(cls, doc, "")

    def resolved(self) -> "PipelineConfig":
        """Copy with the top-level seed pushed into each stage."""
        cfg = PipelineConfig.from_dict(self.to_dict())
        if cfg.seed is not None:
            cfg.basegen.rng_seed = cfg.seed
            cfg.augment.rng_seed = cfg.seed
            cfg.train.seed = cfg.seed
        return cfg

    def make_backend(self) -> FeatureBackend:
        b = self.backend
        return make_backend(b.name, seed=b.seed, weights_path=b.weights_path)


_TUPLE_FIELDS = {("augment", "scale_range"), ("loss", "style_layers")}


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        where = f" in section {prefix!r}" if prefix else ""
        raise ConfigError(f"unknown config field(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, name)
        elif (prefix, name) in _TUPLE_FIELDS and value is not None:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {prefix or '<root>'}: {exc}") from exc


def apply_override(doc: dict, key: str, value) -> None:
    """Set ``section.field`` (dotted) in a config dict."""
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section in override {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config field in override {key!r}")
    node[parts[-1]] = value


def load_config(path=None, overrides=(), seed=None) -> PipelineConfig:
    """Defaults <- config file <- $SONARSYNTH_SEED <- overrides <- ``seed`` argument."""
    doc = PipelineConfig().to_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        doc = PipelineConfig.from_dict(user).to_dict()
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            doc["seed"] = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    for key, value in overrides:
        apply_override(doc, key, value)
    if seed is not None:
        doc["seed"] = seed
    return PipelineConfig.from_dict(doc).resolved()


def write_lock(out_dir, command: str, cfg: PipelineConfig, args: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = {"command": command, "args": args, "config": cfg.to_dict()}
    path = out_dir / "config.lock"
    path.write_text(json.dumps(lock, indent=2, sort_keys=True) + "\n")
    return path


def _training_config_doc(cfg: PipelineConfig) -> dict:
    return {"train": asdict(cfg.train), "loss": asdict(cfg.loss), "backend": asdict(cfg.backend)}


def cmd_basegen(depth_manifest, cfg: PipelineConfig, out_dir) -> Path:
    """Turn every depth frame of a manifest into a base image; returns the new manifest path."""
    out_dir = Path(out_dir)
    write_lock(out_dir, "basegen", cfg, {"manifest": str(depth_manifest), "out_dir": str(out_dir)})
    manifest = load_manifest(depth_manifest, require_content=False)
    table = load_colormap(cfg.basegen.colormap)
    entries, failures = [], []
    for i, entry in enumerate(manifest.content):
        try:
            depth = load_image(entry.path)
            if depth.channels != 1:
                raise ValueError("depth image must be single-channel")
            stage = dataclasses.replace(cfg.basegen, rng_seed=cfg.basegen.rng_seed + i)
            base = make_base_image(depth, stage, colormap=table)
            dest = out_dir / f"base_{i:05d}_{entry.path.stem}.png"
            save_image(base, dest)
            entries.append(ContentEntry(dest.resolve(), entry.boxes))
        except (OSError, ValueError) as exc:
            failures.append(f"{entry.path}: {exc}")
    if failures:
        raise RuntimeError("base image generation failed for:\n  " + "\n  ".join(failures))
    out = out_dir / "manifest.json"
    save_manifest(DatasetManifest(entries, manifest.styles), out)
    return out


def cmd_train_style(manifest_path, cfg: PipelineConfig, out_dir, resume: bool = False):
    """Train the style network; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    write_lock(
        out_dir,
        "train-style",
        cfg,
        {"manifest": str(manifest_path), "out_dir": str(out_dir), "resume": resume},
    )
    manifest = load_manifest(manifest_path)
    if manifest.n_styles < 1:
        raise ConfigError(f"{manifest_path}: no style sets; training needs at least one")
    backend = cfg.make_backend()
    data = TrainingData.from_manifest(manifest)
    train(
        data,
        cfg.train,
        cfg.loss,
        backend,
        out_dir=out_dir,
        resume=resume,
        config=_training_config_doc(cfg),
        progress=True,
    )
    return latest_checkpoint(out_dir)[1]


def stylize_image(net, img: Image, style_id: int) -> Image:
    with torch.no_grad():
        out = net(image_to_tensor(img), style_id)
    return Image.clipped(out.permute(1, 2, 0).double().numpy())


def cmd_stylize(checkpoint, manifest_path, style_id: int, out_dir, cfg: PipelineConfig | None = None):
    """Stylize every content image with one bank; boxes are carried over unchanged."""
    out_dir = Path(out_dir)
    cfg = cfg or PipelineConfig()
    write_lock(
        out_dir,
        "stylize",
        cfg,
        {
            "checkpoint": str(checkpoint),
            "manifest": str(manifest_path),
            "style_id": style_id,
            "out_dir": str(out_dir),
        },
    )
    net, _, _ = load_checkpoint(checkpoint)
    if not 0 <= style_id < net.n_styles:
        raise ConfigError(f"style_id {style_id} out of range: checkpoint has {net.n_styles} styles")
    net.eval()
    manifest = load_manifest(manifest_path, require_content=False)
    entries = []
    for i, entry in enumerate(manifest.content):
        out = stylize_image(net, load_image(entry.path), style_id)
        dest = out_dir / f"styled{style_id}_{i:05d}_{entry.path.stem}.png"
        save_image(out, dest)
        entries.append(ContentEntry(dest.resolve(), entry.boxes))
    out = out_dir / "manifest.json"
    save_manifest(DatasetManifest(entries, manifest.styles), out)
    return out


def cmd_augment(manifest_path, cfg: PipelineConfig, copies: int, out_dir) -> Path:
    out_dir = Path(out_dir)
    write_lock(
        out_dir,
        "augment",
        cfg,
        {"manifest": str(manifest_path), "copies": copies, "out_dir": str(out_dir)},
    )
    manifest = load_manifest(manifest_path, require_content=False)
    expanded = expand_training_set(manifest, cfg.augment, copies, out_dir)
    out = out_dir / "manifest.json"
    save_manifest(expanded, out)
    return out


def load_image_set(source) -> list[Image]:
    """Images from a manifest (content entries) or a directory of PNGs (sorted by name)."""
    source = Path(source)
    if source.is_dir():
        paths = sorted(source.glob("*.png"))
    else:
        paths = [e.path for e in load_manifest(source, require_content=False).content]
    return [load_image(p) for p in paths]


def pair_indices(n_a: int, n_b: int, n_pairs: int | None, seed: int):
    """Coupled index draws: one uniform variate per pair feeds both sets.

    Two sets of equal length therefore get identical index sequences.
    """
    n_pairs = n_pairs or max(n_a, n_b)
    u = np.random.default_rng(seed).random(n_pairs)
    return (u * n_a).astype(int), (u * n_b).astype(int)


def set_distances(
    set_a, set_b, loss_cfg: LossConfig, backend: FeatureBackend, n_pairs=None, seed: int = 0
) -> dict:
    """Mean ATKI and Gram distances over sampled pairs (a, b)."""
    if not set_a or not set_b:
        raise ValueError("both image sets must be non-empty")
    ia, ib = pair_indices(len(set_a), len(set_b), n_pairs, seed)
    atki, gram = [], []
    with torch.no_grad():
        for i, j in zip(ia, ib):
            a, b = image_to_tensor(set_a[i]), image_to_tensor(set_b[j])
            atki.append(float(atki_loss(a, b, loss_cfg.k)))
            gram.append(float(style_loss(backend, a, b, loss_cfg.style_layers)))
    return {"atki_distance": float(np.mean(atki)), "gram_distance": float(np.mean(gram)), "n_pairs": len(ia)}


def image_to_set_distances(img, style_set, loss_cfg: LossConfig, backend: FeatureBackend) -> dict:
    """Mean ATKI and Gram distances from one image to every member of a set."""
    atki, gram = [], []
    x = image_to_tensor(img) if isinstance(img, Image) else img
    with torch.no_grad():
        for s in style_set:
            s = image_to_tensor(s) if isinstance(s, Image) else s
            atki.append(float(atki_loss(x, s, loss_cfg.k)))
            gram.append(float(style_loss(backend, x, s, loss_cfg.style_layers)))
    return {"atki_distance": float(np.mean(atki)), "gram_distance": float(np.mean(gram))}


def cmd_eval_style(set_a, set_b, cfg: PipelineConfig, out_path) -> dict:
    out_path = Path(out_path)
    args = {"set_a": str(set_a), "set_b": str(set_b), "out": str(out_path)}
    write_lock(out_path.parent, "eval-style", cfg, args)
    a, b = load_image_set(set_a), load_image_set(set_b)
    if not a or not b:
        raise ConfigError("eval-style needs two non-empty image sets")
    result = set_distances(a, b, cfg.loss, cfg.make_backend(), cfg.eval_pairs, cfg.eval_seed)
    out_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def ground_truth_by_id(manifest: DatasetManifest, base: Path) -> tuple[dict, dict]:
    """Ground truth keyed by manifest-relative path; basenames are added as aliases."""
    gts = {}
    for e in manifest.content:
        rel = os.path.relpath(e.path, base)
        gts[rel] = list(e.boxes)
    aliases = {}
    for rel, boxes in gts.items():
        name = Path(rel).name
        aliases.setdefault(name, []).append(rel)
    return gts, {k: v[0] for k, v in aliases.items() if len(v) == 1}


def cmd_eval_detect(
    detections_csv, manifest_path, out_dir, threshold: float = 0.25, cfg: PipelineConfig | None = None
) -> float:
    """Write ``pr.csv`` and ``ap.json``; returns the AP."""
    out_dir = Path(out_dir)
    write_lock(
        out_dir,
        "eval-detect",
        cfg or PipelineConfig(),
        {
            "detections": str(detections_csv),
            "manifest": str(manifest_path),
            "threshold": threshold,
            "out_dir": str(out_dir),
        },
    )
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path, require_content=False)
    gts, aliases = ground_truth_by_id(manifest, manifest_path.parent.resolve())
    dets = read_detections(detections_csv)
    remapped = []
    for d in dets:
        key = d.image_id if d.image_id in gts else aliases.get(d.image_id, d.image_id)
        remapped.append(dataclasses.replace(d, image_id=key))
    curve = pr_curve(remapped, gts, threshold)
    write_pr(curve, out_dir / "pr.csv", out_dir / "ap.json")
    return curve.ap


def cmd_pipeline(cfg: PipelineConfig, out_dir=None) -> dict:
    """basegen -> train-style -> stylize (every style) -> augment -> eval-style."""
    out_dir = Path(out_dir or cfg.paths.out_dir or "")
    if not str(out_dir) or cfg.paths.manifest is None:
        raise ConfigError("pipeline needs paths.manifest and an output directory")
    write_lock(out_dir, "pipeline", cfg, {"out_dir": str(out_dir)})
    base_manifest = cmd_basegen(cfg.paths.manifest, cfg, out_dir / "basegen")
    ckpt = cmd_train_style(base_manifest, cfg, out_dir / "train")
    manifest = load_manifest(base_manifest)
    backend = cfg.make_backend()
    summary = {"checkpoint": os.path.relpath(ckpt, out_dir), "styles": []}
    for sid in range(manifest.n_styles):
        styled = cmd_stylize(ckpt, base_manifest, sid, out_dir / "stylize" / f"style_{sid}", cfg)
        augmented = cmd_augment(styled, cfg, cfg.copies, out_dir / "augment" / f"style_{sid}")
        dist = set_distances(
            load_image_set(styled),
            [load_image(p) for p in manifest.styles[sid]],
            cfg.loss,
            backend,
            cfg.eval_pairs,
            cfg.eval_seed,
        )
        summary["styles"].append(
            {
                "style_id": sid,
                "stylized_manifest": os.path.relpath(styled, out_dir),
                "augmented_manifest": os.path.relpath(augmented, out_dir),
                **dist,
            }
        )
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
