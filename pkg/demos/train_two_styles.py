"""
Training a two-style bank
=========================

A short desk-scale run: 50 base images, a dark and a bright style set,
alternating stylizing and autoencoder updates with ``T = 2``. After training,
each held-out image is stylized with both banks and compared against both
style sets. Pass ``--iterations`` to train longer; 2000 matches the
acceptance run.
"""

import argparse
import tempfile

import numpy as np
import torch

from sonarsynth.featurenet import TestConvBackend
from sonarsynth.losses import LossConfig
from sonarsynth.pipeline import image_to_set_distances
from sonarsynth.synthetic import make_desk_dataset
from sonarsynth.trainer import TrainConfig, TrainingData, train

parser = argparse.ArgumentParser()
parser.add_argument("--iterations", type=int, default=300)
args = parser.parse_args()

work = tempfile.mkdtemp(prefix="sonarsynth_demo_")
data = TrainingData.from_manifest(make_desk_dataset(f"{work}/train", seed=0))
held = TrainingData.from_manifest(make_desk_dataset(f"{work}/held", n_content=5, seed=9, styles=())).content

backend = TestConvBackend(seed=42)
# the random test backend gives tiny Gram values, hence the large style weight
loss_cfg = LossConfig(beta=1000.0)
net, rows = train(data, TrainConfig(iterations=args.iterations, checkpoint_every=0), loss_cfg, backend,
                  out_dir=f"{work}/run")
print(f"trained {len(rows)} iterations; checkpoints and metrics.csv in {work}/run")
for r in rows[-3:]:
    print(r["iter"], r["branch"], " ".join(f"{k}={v:.3g}" for k, v in r.items() if k.startswith("L_")))

net.eval()
with torch.no_grad():
    outs = [net(torch.stack(held), s) for s in (0, 1)]
for s, name in enumerate(["dark", "bright"]):
    d = [[image_to_set_distances(o, data.styles[t], loss_cfg, backend)["atki_distance"] for t in (0, 1)]
         for o in outs[s]]
    d = np.array(d).mean(0)
    print(f"bank {s} ({name}): mean ATKI distance to dark {d[0]:.4f}, to bright {d[1]:.4f}")
