"""Image-to-spike-train encoding and readout-to-box decoding.

Rate coding: each pixel fires an independent Bernoulli(pixel * p_max) spike
per timestep, the discrete-time realization of a Poisson process (no
spike-to-spike correlation). Predictions live in normalized [0,1]
coordinates; the final box is taken from the last layer at the last
timestep, corner-swapped and clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, Rng


@dataclass
class BBox:
    """Box as (x_min, y_min, x_max, y_max); max edges are exclusive."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    normalized: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def canonical(self) -> "BBox":
        """Swap inverted corners so min <= max on both axes."""
        x0, x1 = sorted((self.x_min, self.x_max))
        y0, y1 = sorted((self.y_min, self.y_max))
        return BBox(x0, y0, x1, y1, self.normalized)


@dataclass
class EncodedInput:
    spikes: np.ndarray  # [T, 1, H, W] float32 of {0, 1}
    source_shape: tuple[int, int]
    p_max: float
    seed: int


def rate_encode(image: np.ndarray, t_steps: int, p_max: float, rng: Rng) -> EncodedInput:
    """Poisson-rate encode a [0,1] grayscale image into [T,1,H,W] spikes."""
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"pixel values must lie in [0,1], got range [{lo}, {hi}]")
    if not 0.0 < p_max <= 1.0:
        raise ValueError(f"p_max must be in (0, 1], got {p_max}")
    if t_steps < 1:
        raise ValueError(f"need at least one timestep, got {t_steps}")
    h, w = image.shape
    p = image.astype(DTYPE) * DTYPE(p_max)
    u = rng.uniform(0.0, 1.0, (t_steps, h, w))
    spikes = (u < p[None]).astype(DTYPE)[:, None]
    return EncodedInput(spikes=spikes, source_shape=(h, w), p_max=p_max, seed=rng.seed)


def normalize_bbox(box: BBox, width: int, height: int) -> BBox:
    """Pixel box -> [0,1] box (divide x by width, y by height)."""
    if width <= 0 or height <= 0:
        raise ValueError(f"dimensions must be positive, got {width}x{height}")
    if box.normalized:
        raise ValueError("box is already normalized")
    return BBox(
        box.x_min / width, box.y_min / height, box.x_max / width, box.y_max / height,
        normalized=True,
    )


def denormalize_bbox(box: BBox, width: int, height: int) -> BBox:
    """[0,1] box -> pixel box."""
    if width <= 0 or height <= 0:
        raise ValueError(f"dimensions must be positive, got {width}x{height}")
    if not box.normalized:
        raise ValueError("box is not normalized")
    return BBox(
        box.x_min * width, box.y_min * height, box.x_max * width, box.y_max * height,
        normalized=False,
    )


def decode_prediction(readout_history: np.ndarray) -> BBox:
    """Last timestep of the last layer, canonicalized and clamped to [0,1]."""
    if readout_history.ndim != 3 or readout_history.shape[0] < 1 or readout_history.shape[1] < 1:
        raise ValueError(
            f"readout history must be [T,L,4] with T,L >= 1, got {readout_history.shape}"
        )
    raw = readout_history[-1, -1]
    box = BBox(float(raw[0]), float(raw[1]), float(raw[2]), float(raw[3]), normalized=True)
    box = box.canonical()
    return BBox(
        min(max(box.x_min, 0.0), 1.0),
        min(max(box.y_min, 0.0), 1.0),
        min(max(box.x_max, 0.0), 1.0),
        min(max(box.y_max, 0.0), 1.0),
        normalized=True,
    )
