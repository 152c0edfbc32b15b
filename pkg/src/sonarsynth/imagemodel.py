"""Image, box and manifest types shared across the pipeline, plus file I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "Image",
    "BoundingBox",
    "ContentEntry",
    "DatasetManifest",
    "ManifestError",
    "load_image",
    "save_image",
    "load_manifest",
    "save_manifest",
]


class ManifestError(ValueError):
    """Raised when a manifest file is malformed or inconsistent."""


class Image:
    """Immutable intensity grid with values in [0, 1].

    Data is stored as a float64 array of shape ``(height, width, channels)``
    with ``channels`` in {1, 3}. Construction rejects anything else.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"image values must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
            )
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def clipped(cls, data) -> "Image":
        """Build an image after clamping ``data`` into [0, 1]."""
        return cls(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def height(self) -> int:
        return self._data.shape[0]

    @property
    def width(self) -> int:
        return self._data.shape[1]

    @property
    def channels(self) -> int:
        return self._data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates (pixel i spans [i, i+1))."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: int = 0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self.as_list()}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max, self.label]

    @classmethod
    def from_list(cls, values: Sequence) -> "BoundingBox":
        if len(values) == 4:
            return cls(*(float(v) for v in values))
        if len(values) == 5:
            return cls(*(float(v) for v in values[:4]), label=int(values[4]))
        raise ValueError(f"box must have 4 or 5 fields, got {list(values)}")

    def clamp(self, width: float, height: float) -> "BoundingBox | None":
        """Clip to ``[0, width] x [0, height]``; ``None`` if nothing is left."""
        x0, x1 = max(self.x_min, 0.0), min(self.x_max, float(width))
        y0, y1 = max(self.y_min, 0.0), min(self.y_max, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return BoundingBox(x0, y0, x1, y1, self.label)


@dataclass(frozen=True)
class ContentEntry:
    path: Path
    boxes: tuple[BoundingBox, ...] = ()


@dataclass
class DatasetManifest:
    """A content set plus ``n_styles`` style sets, indexed 0..N-1.

    Paths are absolute once loaded; :func:`save_manifest` writes them relative
    to the manifest file.
    """

    content: list[ContentEntry] = field(default_factory=list)
    styles: list[list[Path]] = field(default_factory=list)

    @property
    def n_styles(self) -> int:
        return len(self.styles)

    def __len__(self):
        return len(self.content)


def load_image(path) -> Image:
    """Read an 8- or 16-bit grayscale or RGB PNG into an :class:`Image`."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        pil = PILImage.open(path)
        pil.load()
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ValueError(f"{path}: cannot decode image ({exc})") from exc
    if pil.format != "PNG":
        raise ValueError(f"{path}: unsupported format {pil.format}, expected PNG")
    if pil.mode == "P":
        pil = pil.convert("RGB")
    if pil.mode in ("L", "RGB"):
        return Image(np.asarray(pil, dtype=np.float64) / 255.0)
    if pil.mode.startswith("I;16") or pil.mode == "I":
        # 16-bit grayscale; PIL reports it as I;16 or widened to I
        arr = np.asarray(pil).astype(np.float64)
        if arr.min() < 0 or arr.max() > 65535:
            raise ValueError(f"{path}: pixel values outside the 16-bit range")
        return Image(arr / 65535.0)
    raise ValueError(f"{path}: unsupported image mode {pil.mode!r} (bit depth/format)")


def _to_uint8(img: Image) -> np.ndarray:
    return np.round(img.data * 255.0).astype(np.uint8)


def save_image(img: Image, path) -> None:
    """Write ``img`` as an 8-bit PNG (grayscale or RGB)."""
    path = Path(path)
    q = _to_uint8(img)
    if img.channels == 1:
        pil = PILImage.fromarray(q[:, :, 0])
    else:
        pil = PILImage.fromarray(q)
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc


def _resolve(base: Path, p: str, check: bool) -> Path:
    full = (base / p).resolve() if not os.path.isabs(p) else Path(p)
    if check and not full.is_file():
        raise ManifestError(f"dangling path in manifest: {p}")
    return full


def load_manifest(path, require_content: bool = True, check_paths: bool = True) -> DatasetManifest:
    """Parse and validate a JSON dataset manifest.

    Relative paths resolve against the manifest's directory. Style ids must
    form the contiguous range ``0..N-1``.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    base = path.parent

    content = []
    for i, rec in enumerate(doc.get("content", [])):
        if not isinstance(rec, dict) or "path" not in rec:
            raise ManifestError(f"{path}: malformed content record #{i}")
        try:
            boxes = tuple(BoundingBox.from_list(b) for b in rec.get("boxes", []))
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: bad box in content record #{i}: {exc}") from exc
        content.append(ContentEntry(_resolve(base, rec["path"], check_paths), boxes))
    if require_content and not content:
        raise ManifestError(f"{path}: no content entries")

    by_id: dict[int, list[Path]] = {}
    for i, rec in enumerate(doc.get("styles", [])):
        if not isinstance(rec, dict) or "id" not in rec or "paths" not in rec:
            raise ManifestError(f"{path}: malformed style record #{i}")
        sid = rec["id"]
        if not isinstance(sid, int) or isinstance(sid, bool) or sid < 0:
            raise ManifestError(f"{path}: style id must be a non-negative integer, got {sid!r}")
        if sid in by_id:
            raise ManifestError(f"{path}: duplicate style id {sid}")
        if not rec["paths"]:
            raise ManifestError(f"{path}: style set {sid} is empty")
        by_id[sid] = [_resolve(base, p, check_paths) for p in rec["paths"]]
    if sorted(by_id) != list(range(len(by_id))):
        raise ManifestError(f"{path}: non-contiguous style ids {sorted(by_id)}")
    styles = [by_id[i] for i in range(len(by_id))]
    return DatasetManifest(content=content, styles=styles)


def _fmt_num(v: float):
    return int(v) if float(v).is_integer() else float(v)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        return os.path.relpath(Path(p).resolve(), base)

    doc = {
        "content": [
            {
                "path": rel(e.path),
                "boxes": [[*(_fmt_num(v) for v in b.as_list()[:4]), b.label] for b in e.boxes],
            }
            for e in manifest.content
        ],
        "styles": [{"id": i, "paths": [rel(p) for p in ps]} for i, ps in enumerate(manifest.styles)],
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n")
    os.replace(tmp, path)
