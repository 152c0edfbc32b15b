"""Slow, loop-based reference implementations used as test oracles.

Nothing here touches torch's conv or matmul kernels, so agreement with the
library is a genuine cross-check.
"""

import itertools

import numpy as np


def conv2d(x, weight, bias, stride, pad):
    """Zero-padded cross-correlation; x (C,H,W), weight (O,C,k,k)."""
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[oc, i, j] = np.sum(patch * weight[oc]) + bias[oc]
    return out


def conv_features(backend, x):
    """Both taps of a TestConvBackend, recomputed with loops."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 1:
        x = np.repeat(x, 3, axis=0)
    c1, c2 = backend.conv1, backend.conv2
    a = conv2d(x, c1.weight.detach().double().numpy(), c1.bias.detach().double().numpy(),
               c1.stride[0], c1.padding[0])
    a = np.maximum(a, 0)
    b = conv2d(a, c2.weight.detach().double().numpy(), c2.bias.detach().double().numpy(),
               c2.stride[0], c2.padding[0])
    return [a, np.maximum(b, 0)]


def gram(f):
    c, h, w = f.shape
    g = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            s = 0.0
            for i in range(h):
                for j in range(w):
                    s += f[a, i, j] * f[b, i, j]
            g[a, b] = s / (c * h * w)
    return g


def mean_sq(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return sum((p - q) ** 2 for p, q in zip(a, b)) / len(a)


def reconstruction(c, o):
    return mean_sq(o, c)


def content(backend, o, c, layer):
    return mean_sq(conv_features(backend, o)[layer], conv_features(backend, c)[layer])


def style(backend, o, s, layers=None):
    fo, fs = conv_features(backend, o), conv_features(backend, s)
    layers = range(len(fo)) if layers is None else layers
    return sum(mean_sq(gram(fo[l]), gram(fs[l])) for l in layers)


def tv(x):
    x = np.asarray(x)
    c, h, w = x.shape
    s = 0.0
    for ch, i, j in itertools.product(range(c), range(h), range(w)):
        if i + 1 < h:
            s += (x[ch, i + 1, j] - x[ch, i, j]) ** 2
        if j + 1 < w:
            s += (x[ch, i, j + 1] - x[ch, i, j]) ** 2
    return s / x.size


def gray(x):
    x = np.asarray(x)
    if x.shape[0] == 1:
        return x[0]
    return 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]


def atki(o, s, k):
    to = sorted(gray(o).ravel().tolist(), reverse=True)[:k]
    ts = sorted(gray(s).ravel().tolist(), reverse=True)[:k]
    return sum((a - b) ** 2 for a, b in zip(to, ts)) / k


def central_difference(f, x, eps=1e-4):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g


def iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / ua if ua > 0 else 0.0


def exhaustive_ap(dets, gts, thr=0.25):
    """AP by recomputing matches from scratch at every distinct score threshold.

    ``dets``: list of (image_id, [x0,y0,x1,y1], score); ``gts``: {image_id: [box, ...]}.
    """
    n_gt = sum(len(v) for v in gts.values())
    thresholds = sorted({d[2] for d in dets}, reverse=True)
    pts = []
    for t in thresholds:
        tp = fp = 0
        for img in {d[0] for d in dets}:
            kept = [(i, d) for i, d in enumerate(dets) if d[0] == img and d[2] >= t]
            kept.sort(key=lambda p: (-p[1][2], p[0]))
            used = set()
            for _, d in kept:
                best, bj = -1.0, None
                for j, g in enumerate(gts.get(img, [])):
                    if j in used:
                        continue
                    v = iou(d[1], g)
                    if v > best:
                        best, bj = v, j
                if bj is not None and best >= thr:
                    used.add(bj)
                    tp += 1
                else:
                    fp += 1
        pts.append((tp / n_gt, tp / (tp + fp)))
    # area under the upper envelope, integrated as a step function over recall
    ap, prev_r = 0.0, 0.0
    for i, (r, _) in enumerate(pts):
        best_p = max(p for rr, p in pts[i:])
        ap += (r - prev_r) * best_p
        prev_r = r
    return ap, pts
