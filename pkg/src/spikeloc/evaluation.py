"""Box IoU, dataset mIoU, the constant-box baseline, and the evaluation
runner (resize -> encode -> forward -> decode -> IoU per test sample).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coding import BBox, decode_prediction, denormalize_bbox, normalize_bbox, rate_encode
from .data import DatasetManifest, Sample, resize_bilinear
from .network import Network, forward_sequence
from .numerics import Rng, derive_seed


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union via continuous coordinate geometry."""
    if a.normalized != b.normalized:
        raise ValueError(
            f"cannot compare boxes across coordinate spaces "
            f"(a normalized={a.normalized}, b normalized={b.normalized})"
        )
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass
class EvalReport:
    miou: float
    per_sample: list[tuple[str, float]]
    baseline_miou: float
    baseline_box: BBox  # normalized
    histogram: np.ndarray  # 10 IoU bins over [0,1]


def best_constant_box(
    gt_boxes: list[BBox], resolution: float = 0.05
) -> tuple[BBox, float]:
    """Grid-search the fixed normalized box with the highest mean IoU."""
    if not gt_boxes:
        raise ValueError("no boxes to fit a baseline to")
    gt = np.array([b.as_array() for b in gt_boxes])  # [S,4]
    grid = np.round(np.arange(0.0, 1.0 + resolution / 2, resolution), 10)
    k = len(grid)
    lo_idx, hi_idx = np.triu_indices(k, k=1)
    xs0, xs1 = grid[lo_idx], grid[hi_idx]  # all x_min < x_max pairs
    nx = len(xs0)
    # candidate boxes: cross product of x-pairs and y-pairs
    bx0 = np.repeat(xs0, nx)
    bx1 = np.repeat(xs1, nx)
    by0 = np.tile(xs0, nx)
    by1 = np.tile(xs1, nx)

    gx0, gy0, gx1, gy1 = gt[:, 0], gt[:, 1], gt[:, 2], gt[:, 3]
    iw = np.clip(np.minimum(bx1[:, None], gx1) - np.maximum(bx0[:, None], gx0), 0, None)
    ih = np.clip(np.minimum(by1[:, None], gy1) - np.maximum(by0[:, None], gy0), 0, None)
    inter = iw * ih
    area_b = ((bx1 - bx0) * (by1 - by0))[:, None]
    area_g = (gx1 - gx0) * (gy1 - gy0)
    union = area_b + area_g - inter
    ious = np.where(union > 0, inter / union, 0.0)
    mean_ious = ious.mean(axis=1)
    best = int(np.argmax(mean_ious))
    box = BBox(float(bx0[best]), float(by0[best]), float(bx1[best]), float(by1[best]),
               normalized=True)
    return box, float(mean_ious[best])


def predict_box(net: Network, sample: Sample, t_steps: int, p_max: float, seed: int) -> BBox:
    """Pixel-space box prediction for one already-resized sample."""
    enc = rate_encode(sample.image, t_steps, p_max, Rng(seed))
    history, _ = forward_sequence(net, enc.spikes)
    pred = decode_prediction(history)
    h, w = sample.image.shape
    return denormalize_bbox(pred, w, h)


def evaluate(
    net: Network,
    test: DatasetManifest,
    t_steps: int,
    p_max: float,
    seed: int,
    predict_fn: Callable[[Sample], BBox] | None = None,
) -> EvalReport:
    """mIoU of the network over a test manifest, plus the constant baseline.

    Per-sample encoding seeds are derived from (seed, sample id), so runs
    are reproducible and samples decorrelated. predict_fn (pixel-space box
    for a resized sample) can replace the network pipeline for harness
    sanity checks.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    h, w = net.input_shape
    per_sample: list[tuple[str, float]] = []
    gt_norm: list[BBox] = []
    for i in range(len(test)):
        sample = test.load_sample(i)
        if sample.image.shape != (h, w):
            image, bbox = resize_bilinear(sample.image, sample.bbox, (h, w))
            sample = Sample(image=image, bbox=bbox, id=sample.id)
        if predict_fn is not None:
            pred = predict_fn(sample)
        else:
            pred = predict_box(net, sample, t_steps, p_max, derive_seed(seed, sample.id))
        score = iou(pred.canonical(), sample.bbox)
        per_sample.append((sample.id, score))
        gt_norm.append(normalize_bbox(sample.bbox, w, h))
    base_box, base_miou = best_constant_box(gt_norm)
    ious = np.array([s for _, s in per_sample])
    hist, _ = np.histogram(ious, bins=10, range=(0.0, 1.0))
    return EvalReport(
        miou=float(ious.mean()),
        per_sample=per_sample,
        baseline_miou=base_miou,
        baseline_box=base_box,
        histogram=hist,
    )
