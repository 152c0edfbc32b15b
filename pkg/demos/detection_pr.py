"""
Scoring detections
==================

Builds a toy detection result over a few images and sweeps the score
threshold into a precision-recall curve. A detection is correct when its
IOU with an unmatched ground-truth box is at least 0.25. The small
classification backbone is printed layer by layer at the end.
"""

import numpy as np

from sonarsynth.detecteval import DetectionRecord, build_detector_backbone, iou, pr_curve
from sonarsynth.imagemodel import BoundingBox

rng = np.random.default_rng(4)
gts = {f"frame{i}": [BoundingBox(*xy, *(xy + rng.uniform(8, 16, 2))) for xy in rng.uniform(0, 40, (2, 2))]
       for i in range(4)}

dets = []
for image_id, boxes in gts.items():
    for g in boxes:
        # a decent hit, plus a duplicate that can only count as a false positive
        shift = rng.normal(0, 2, 2)
        hit = BoundingBox(g.x_min + shift[0], g.y_min + shift[1], g.x_max + shift[0], g.y_max + shift[1])
        dets.append(DetectionRecord(image_id, hit, float(rng.uniform(0.5, 1.0))))
        dets.append(DetectionRecord(image_id, hit, float(rng.uniform(0.0, 0.5))))
    # clutter
    x, y = rng.uniform(0, 50, 2)
    dets.append(DetectionRecord(image_id, BoundingBox(x, y, x + 6, y + 6), float(rng.uniform(0, 1))))

print("example IOU", round(iou(gts["frame0"][0], dets[0].box), 3))
curve = pr_curve(dets, gts)
print(f"{len(dets)} detections, {sum(map(len, gts.values()))} ground-truth boxes")
for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
    print(f"  score >= {t:.2f}: recall {r:.2f} precision {p:.2f}")
print("AP", round(curve.ap, 4))

_, report = build_detector_backbone(seed=0)
for name, shape in report:
    print(f"  {name:<10} {shape}")
