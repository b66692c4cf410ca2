"""Dataset pipeline: synthetic shape generator, PGM image + CSV annotation
loading, trimap-to-box conversion, grayscale, bilinear resize, and
box-aware augmentation.

On-disk layout: ``root/images/*.pgm`` (binary 8-bit P5), ``root/annotations.csv``
with header ``id,x_min,y_min,x_max,y_max`` in pixels (max edges exclusive),
and optionally ``root/trimaps/*.pgm`` with raw label bytes {1,2,3}.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coding import BBox
from .numerics import DTYPE, Rng

# synthetic generator bounds: shape extent relative to min image dimension
SHAPE_MIN_FRAC = 0.15
SHAPE_MAX_FRAC = 0.60
SHAPE_INTENSITY = (0.7, 1.0)


@dataclass
class Sample:
    image: np.ndarray  # [H,W] float32 in [0,1]
    bbox: BBox  # pixels, exclusive max
    id: str

    def __post_init__(self):
        h, w = self.image.shape
        b = self.bbox
        if b.normalized:
            raise ValueError(f"sample {self.id}: bbox must be in pixels")
        if not (0 <= b.x_min < b.x_max <= w and 0 <= b.y_min < b.y_max <= h):
            raise ValueError(
                f"sample {self.id}: bbox ({b.x_min},{b.y_min},{b.x_max},{b.y_max}) "
                f"outside {w}x{h} image or empty"
            )


# ---------------------------------------------------------------- PGM I/O


def read_pgm_raw(path: str | Path) -> np.ndarray:
    """Binary 8-bit P5 file -> uint8 [H,W] array."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' comments run to EOL
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported maxval {maxval} (8-bit only)")
    need = width * height
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise ValueError(f"{path}: expected {need} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def read_pgm_size(path: str | Path) -> tuple[int, int]:
    """(H, W) from the PGM header without decoding the raster."""
    with open(path, "rb") as f:
        head = f.read(256)
    if not head.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    pos, tokens = 2, []
    while len(tokens) < 2 and pos < len(head):
        while pos < len(head) and head[pos : pos + 1].isspace():
            pos += 1
        if pos < len(head) and head[pos : pos + 1] == b"#":
            while pos < len(head) and head[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(head) and not head[pos : pos + 1].isspace():
            pos += 1
        tokens.append(head[start:pos])
    if len(tokens) < 2:
        raise ValueError(f"{path}: truncated PGM header")
    width, height = int(tokens[0]), int(tokens[1])
    return height, width


def read_pgm(path: str | Path) -> np.ndarray:
    """PGM -> float32 [H,W] in [0,1]."""
    return read_pgm_raw(path).astype(DTYPE) / DTYPE(255.0)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """float [0,1] (rounded to 8 bits) or uint8 [H,W] -> binary P5 file."""
    if image.dtype == np.uint8:
        raw = image
    else:
        raw = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = raw.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(raw.tobytes())


# ------------------------------------------------------- mask/box helpers


def mask_bounds(mask: np.ndarray) -> BBox:
    """Tight pixel box (exclusive max) around the true entries of a mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask has no foreground pixels")
    return BBox(
        float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1)
    )


def trimap_to_bbox(mask: np.ndarray, include_boundary: bool = False, source: str = "") -> BBox:
    """Tight box over trimap foreground (label 1; label 3 optional)."""
    fg = mask == 1
    if include_boundary:
        fg |= mask == 3
    if not fg.any():
        where = source or "trimap"
        raise ValueError(f"{where}: no foreground pixels (label 1)")
    return mask_bounds(fg)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion 0.299 R + 0.587 G + 0.114 B for [3,H,W] input."""
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] RGB tensor, got shape {rgb.shape}")
    r, g, b = rgb[0], rgb[1], rgb[2]
    return (rgb.dtype.type(0.299) * r + rgb.dtype.type(0.587) * g
            + rgb.dtype.type(0.114) * b)


# --------------------------------------------------------- synthetic data


def _render_shape(kind: int, x0: int, y0: int, bw: int, bh: int,
                  apex_frac: float, height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if kind == 0:  # rectangle fills its box exactly
        mask[y0 : y0 + bh, x0 : x0 + bw] = True
        return mask
    ys = np.arange(height)[:, None] + 0.5
    xs = np.arange(width)[None, :] + 0.5
    if kind == 1:  # ellipse inscribed in the box
        cx, cy = x0 + bw / 2.0, y0 + bh / 2.0
        a, b = bw / 2.0, bh / 2.0
        mask = ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0
        return mask
    # triangle: full-width base on the bottom edge, apex on the top edge
    ax, ay = x0 + apex_frac * bw, float(y0)
    bx1, by1 = float(x0), float(y0 + bh)
    cx1, cy1 = float(x0 + bw), float(y0 + bh)

    def side(px, py, qx, qy):
        return (qx - px) * (ys - py) - (qy - py) * (xs - px)

    d1 = side(ax, ay, bx1, by1)
    d2 = side(bx1, by1, cx1, cy1)
    d3 = side(cx1, cy1, ax, ay)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def generate_synthetic(
    n: int,
    image_size: tuple[int, int],
    rng: Rng,
    noise_amplitude: float = 0.1,
) -> list[Sample]:
    """n seeded samples: one bright shape over a dark noisy background.

    The stored box is re-derived from the rendered mask, so it is tight by
    construction; shapes whose rasterization falls below the minimum area
    are rejected and redrawn.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    height, width = image_size
    m = min(height, width)
    lo = math.ceil(SHAPE_MIN_FRAC * m)
    hi = math.floor(SHAPE_MAX_FRAC * m)
    if lo < 2 or hi <= lo:
        raise ValueError(f"image size {image_size} too small for shape bounds")
    min_area = (SHAPE_MIN_FRAC * m) ** 2

    samples = []
    for i in range(n):
        srng = rng.split("synth", i)
        while True:
            kind = int(srng.uniform(0.0, 3.0))
            bw = lo + int(srng.uniform(0.0, float(hi - lo + 1)))
            bh = lo + int(srng.uniform(0.0, float(hi - lo + 1)))
            x0 = int(srng.uniform(0.0, float(width - bw + 1)))
            y0 = int(srng.uniform(0.0, float(height - bh + 1)))
            apex = float(srng.uniform(0.1, 0.9))
            mask = _render_shape(kind, x0, y0, bw, bh, apex, height, width)
            if not mask.any():
                continue
            bbox = mask_bounds(mask)
            if bbox.area >= min_area:
                break
        intensity = DTYPE(srng.uniform(SHAPE_INTENSITY[0], SHAPE_INTENSITY[1]))
        if noise_amplitude > 0:
            image = srng.uniform(0.0, noise_amplitude, (height, width))
        else:
            image = np.zeros((height, width), dtype=DTYPE)
        image[mask] = intensity
        samples.append(Sample(image=image, bbox=bbox, id=f"synth{i:05d}"))
    return samples


def parse_synth_url(url: str) -> dict:
    """``synth://n=250,size=32x32[,noise=0.1]`` -> parameter dict."""
    body = url[len("synth://"):]
    params = {"n": 250, "size": (32, 32), "noise": 0.1}
    if body:
        for part in body.split(","):
            if "=" not in part:
                raise ValueError(f"bad synth parameter {part!r} in {url!r}")
            key, value = part.split("=", 1)
            if key == "n":
                params["n"] = int(value)
            elif key == "size":
                w, h = value.lower().split("x")
                params["size"] = (int(h), int(w))
            elif key == "noise":
                params["noise"] = float(value)
            else:
                raise ValueError(f"unknown synth parameter {key!r} in {url!r}")
    return params


# -------------------------------------------------------------- transforms


def resize_bilinear(
    image: np.ndarray, bbox: BBox | None, target: tuple[int, int]
) -> tuple[np.ndarray, BBox | None]:
    """Corner-aligned bilinear resize; the box scales by the size ratio.

    Sampling: destination index j maps to source coordinate
    j * (S - 1) / (D - 1) (0 when D == 1), so corners map to corners.
    """
    th, tw = target
    if th < 2 or tw < 2:
        raise ValueError(f"target dims must be >= 2, got {target}")
    sh, sw = image.shape

    def axis_weights(src: int, dst: int):
        if dst == 1 or src == 1:
            pos = np.zeros(dst, dtype=image.dtype)
        else:
            pos = np.arange(dst, dtype=image.dtype) * image.dtype.type((src - 1) / (dst - 1))
        i0 = np.floor(pos).astype(np.int64)
        i0 = np.minimum(i0, src - 1)
        i1 = np.minimum(i0 + 1, src - 1)
        frac = (pos - i0).astype(image.dtype)
        return i0, i1, frac

    r0, r1, fr = axis_weights(sh, th)
    c0, c1, fc = axis_weights(sw, tw)
    top = image[r0][:, c0] * (1 - fc)[None, :] + image[r0][:, c1] * fc[None, :]
    bot = image[r1][:, c0] * (1 - fc)[None, :] + image[r1][:, c1] * fc[None, :]
    out = top * (1 - fr)[:, None] + bot * fr[:, None]

    if bbox is None:
        return out, None
    sx, sy = tw / sw, th / sh
    return out, BBox(bbox.x_min * sx, bbox.y_min * sy, bbox.x_max * sx, bbox.y_max * sy)


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    brightness_lo: float = 0.7
    brightness_hi: float = 1.3


def augment(sample: Sample, rng: Rng, cfg: AugmentConfig) -> Sample:
    """Random horizontal flip (box remapped) + multiplicative brightness."""
    image, box = sample.image, sample.bbox
    h, w = image.shape
    if float(rng.uniform(0.0, 1.0)) < cfg.flip_prob:
        image = image[:, ::-1]
        box = BBox(w - box.x_max, box.y_min, w - box.x_min, box.y_max)
    if cfg.brightness_hi > cfg.brightness_lo:
        factor = float(rng.uniform(cfg.brightness_lo, cfg.brightness_hi))
    else:
        factor = cfg.brightness_lo
    if factor != 1.0:
        image = np.clip(image * image.dtype.type(factor), 0.0, 1.0)
    return Sample(image=np.ascontiguousarray(image), bbox=box, id=sample.id)


# ----------------------------------------------------------------- loading


@dataclass
class ManifestEntry:
    id: str
    bbox: BBox  # pixels
    path: Path | None = None
    image: np.ndarray | None = None  # in-memory samples (synthetic)


@dataclass
class DatasetManifest:
    root: Path | None
    entries: list[ManifestEntry]
    split: str  # train | test
    seed: int

    def __len__(self) -> int:
        return len(self.entries)

    def load_sample(self, i: int) -> Sample:
        e = self.entries[i]
        image = e.image if e.image is not None else read_pgm(e.path)
        return Sample(image=image, bbox=e.bbox, id=e.id)

    def samples(self) -> list[Sample]:
        return [self.load_sample(i) for i in range(len(self.entries))]


def load_dataset(
    root: str | Path, split_seed: int, train_count: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Read images/ + annotations.csv, validate, and split train/test."""
    root = Path(root)
    ann = root / "annotations.csv"
    if not ann.is_file():
        raise FileNotFoundError(f"missing annotations file {ann}")
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"missing images directory {images_dir}")

    entries: list[ManifestEntry] = []
    with open(ann, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != [
            "id", "x_min", "y_min", "x_max", "y_max",
        ]:
            raise ValueError(f"{ann}: expected header id,x_min,y_min,x_max,y_max")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{ann}:{lineno}: expected 5 fields, got {len(row)}")
            sample_id = row[0].strip()
            try:
                x0, y0, x1, y1 = (float(v) for v in row[1:])
            except ValueError as exc:
                raise ValueError(f"{ann}:{lineno}: bad coordinate: {exc}") from None
            path = images_dir / f"{sample_id}.pgm"
            if not path.is_file():
                raise FileNotFoundError(f"{ann}:{lineno}: missing image {path}")
            h, w = read_pgm_size(path)
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise ValueError(
                    f"{ann}:{lineno}: sample {sample_id} bbox ({x0},{y0},{x1},{y1}) "
                    f"invalid for {w}x{h} image"
                )
            entries.append(ManifestEntry(id=sample_id, bbox=BBox(x0, y0, x1, y1), path=path))

    if not 0 < train_count <= len(entries):
        raise ValueError(
            f"train_count {train_count} out of range for {len(entries)} samples"
        )
    order = Rng(split_seed).split("split").permutation(len(entries))
    train = [entries[int(i)] for i in order[:train_count]]
    test = [entries[int(i)] for i in order[train_count:]]
    return (
        DatasetManifest(root=root, entries=train, split="train", seed=split_seed),
        DatasetManifest(root=root, entries=test, split="test", seed=split_seed),
    )


def synthetic_manifests(
    n: int,
    image_size: tuple[int, int],
    seed: int,
    train_count: int,
    noise_amplitude: float = 0.1,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded in-memory synthetic dataset split like load_dataset."""
    if not 0 < train_count <= n:
        raise ValueError(f"train_count {train_count} out of range for {n} samples")
    samples = generate_synthetic(n, image_size, Rng(seed).split("gen"), noise_amplitude)
    entries = [ManifestEntry(id=s.id, bbox=s.bbox, image=s.image) for s in samples]
    order = Rng(seed).split("split").permutation(n)
    train = [entries[int(i)] for i in order[:train_count]]
    test = [entries[int(i)] for i in order[train_count:]]
    return (
        DatasetManifest(root=None, entries=train, split="train", seed=seed),
        DatasetManifest(root=None, entries=test, split="test", seed=seed),
    )
