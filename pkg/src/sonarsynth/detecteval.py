"""Detection scoring: IOU matching, precision-recall sweeps and average precision.

Also builds the small classification backbone used for region proposals, so
its layer shapes can be checked against the expected 32x32x3 input.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .imagemodel import BoundingBox

DEFAULT_IOU_THRESHOLD = 0.25


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass
class PRCurve:
    """One point per distinct score threshold, highest threshold first."""

    thresholds: list[float]
    recall: list[float]
    precision: list[float]
    ap: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall, self.precision))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _score_order(dets) -> list[int]:
    # stable: ties keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(dets, gts, threshold: float = DEFAULT_IOU_THRESHOLD):
    """Greedy matching of one image's detections to its ground truth.

    Detections are visited by descending score; each takes the unmatched
    ground-truth box with the highest IOU and counts as a true positive when
    that IOU is >= ``threshold``.

    Returns ``(is_tp, gt_matched)`` aligned with the input lists.
    """
    is_tp = [False] * len(dets)
    matched = [False] * len(gts)
    for i in _score_order(dets):
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if matched[j]:
                continue
            v = iou(dets[i].box, g)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= threshold:
            is_tp[i] = True
            matched[best_j] = True
    return is_tp, matched


def average_precision(recall, precision) -> float:
    """All-point interpolated AP: area under the monotone precision envelope."""
    r = np.concatenate([[0.0], np.asarray(recall, dtype=float)])
    p = np.concatenate([[0.0], np.asarray(precision, dtype=float)])
    env = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * env[1:]))


def pr_curve(all_dets, all_gts, threshold: float = DEFAULT_IOU_THRESHOLD) -> PRCurve:
    """Sweep score thresholds over detections from many images.

    ``all_gts`` maps image id to that image's ground-truth boxes.
    """
    n_gt = sum(len(v) for v in all_gts.values())
    if n_gt == 0:
        raise ValueError("no ground-truth boxes: average precision is undefined")
    per_image = defaultdict(list)
    for d in all_dets:
        per_image[d.image_id].append(d)
    flags = []
    for image_id in sorted(per_image):
        dets = per_image[image_id]
        tp, _ = match_detections(dets, list(all_gts.get(image_id, ())), threshold)
        flags.extend((d.score, t) for d, t in zip(dets, tp))
    if not flags:
        return PRCurve([], [], [], 0.0)
    scores = np.array([s for s, _ in flags])
    tps = np.array([t for _, t in flags], dtype=float)
    order = np.argsort(-scores, kind="stable")
    scores, tps = scores[order], tps[order]
    ctp = np.cumsum(tps)
    cfp = np.cumsum(1.0 - tps)
    # last index of each distinct score group
    last = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    rec = ctp[last] / n_gt
    prec = ctp[last] / (ctp[last] + cfp[last])
    return PRCurve(
        thresholds=scores[last].tolist(),
        recall=rec.tolist(),
        precision=prec.tolist(),
        ap=average_precision(rec, prec),
    )


def read_detections(path) -> list[DetectionRecord]:
    """Read ``image_id,x_min,y_min,x_max,y_max,score`` rows (header required)."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"image_id", "x_min", "y_min", "x_max", "y_max", "score"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for n, rec in enumerate(reader, start=2):
            try:
                box = BoundingBox(*(float(rec[k]) for k in ("x_min", "y_min", "x_max", "y_max")))
                out.append(DetectionRecord(rec["image_id"], box, float(rec["score"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: {exc}") from exc
    return out


def write_pr(curve: PRCurve, csv_path, json_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
            w.writerow([format(t, ".10g"), format(p, ".10g"), format(r, ".10g")])
    Path(json_path).write_text(json.dumps({"ap": curve.ap}, indent=2) + "\n")


class DetectorBackbone(nn.Module):
    """conv5x5x32 / conv3x3x64 / conv3x3x32, each with ReLU and 3x3 max-pool, then FC-200, FC-2."""

    def __init__(self, in_size: int = 32):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 32, 5, padding=2),
            nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
            nn.Conv2d(32, 64, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
            nn.Conv2d(64, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        side = in_size
        for _ in range(3):
            side = (side + 2 - 3) // 2 + 1
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(32 * side * side, 200),
            nn.ReLU(),
            nn.Linear(200, 2),
        )

    def forward(self, x):
        return torch.softmax(self.head(self.features(x)), dim=-1)

    def shape_report(self, in_size: int = 32) -> list[tuple[str, tuple[int, ...]]]:
        x = torch.zeros(1, 3, in_size, in_size)
        report = [("input", tuple(x.shape[1:]))]
        with torch.no_grad():
            for layer in [*self.features, *self.head]:
                x = layer(x)
                report.append((type(layer).__name__, tuple(x.shape[1:])))
            x = torch.softmax(x, dim=-1)
        report.append(("Softmax", tuple(x.shape[1:])))
        return report


def build_detector_backbone(seed: int = 0):
    """Seeded backbone plus its per-layer output shapes for a 32x32x3 input."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = DetectorBackbone().eval()
    return net, net.shape_report()
