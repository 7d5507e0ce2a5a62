"""Dataset ingestion, resizing, splitting, synthetic vein phantoms, and overlays.

Disk format: 8-bit grayscale PNGs, same filename for image and mask; mask
pixels are 0 (background) and 255 (vein wall). Discovery is lexicographic
by filename; an optional manifest (newline-delimited relative paths)
overrides directory scanning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import DOMAIN_PHANTOM, DOMAIN_SPLIT, Rng
from .tensor import ShapeError, Tensor4

TRAIN = "train"
HELDOUT = "heldout"

# Phantom geometry, as fractions: outer semi-axes relative to min(h, w),
# wall thickness relative to the first outer semi-axis. A pixel floor on
# the thickness and a 1% floor on wall area keep degenerate draws legible.
PHANTOM_AXIS_RANGE = (0.15, 0.40)
PHANTOM_THICKNESS_RANGE = (0.05, 0.15)
PHANTOM_MIN_THICKNESS_PX = 2.0
PHANTOM_MIN_WALL_FRACTION = 0.01
PHANTOM_MAX_WALL_FRACTION = 0.60
PHANTOM_SPECKLE_VARIANCE = 0.1
PHANTOM_DEPTH_DECAY = 0.7  # intensity scaled by exp(-decay * y / (h-1))
PHANTOM_BACKGROUND = 0.06
PHANTOM_LUMEN = 0.12
PHANTOM_WALL = 0.90


@dataclass
class Sample:
    image: Tensor4  # (1, 1, h, w), values in [0, 1]
    mask: Tensor4  # (1, 1, h, w), values in {0, 1}
    id: str


@dataclass
class Dataset:
    samples: list[Sample]
    tags: list[str]

    def __len__(self) -> int:
        return len(self.samples)

    def indices(self, split: str) -> list[int]:
        if split not in (TRAIN, HELDOUT):
            raise ValueError(f"unknown split {split!r}, expected {TRAIN!r} or {HELDOUT!r}")
        return [i for i, t in enumerate(self.tags) if t == split]


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_png(path: str | Path) -> np.ndarray:
    """8-bit grayscale -> (h, w) uint8; 8-bit RGB -> (h, w, 3) uint8."""
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            elif im.mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise ValueError(f"{path}: unsupported PNG mode {im.mode!r}, expected L or RGB")
    except OSError as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    if arr.size == 0:
        raise ValueError(f"{path}: image has zero size")
    return arr


def save_png(buffer: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(buffer)
    if arr.dtype != np.uint8:
        raise ValueError(f"save_png expects uint8 pixels, got {arr.dtype}")
    if arr.ndim == 2:
        im = Image.fromarray(arr, mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        im = Image.fromarray(arr, mode="RGB")
    else:
        raise ValueError(f"save_png expects (h, w) or (h, w, 3), got {arr.shape}")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        im.save(path, format="PNG")
    except OSError as e:
        raise OSError(f"cannot write image {path}: {e}") from e


def save_png16(buffer: np.ndarray, path: str | Path) -> None:
    """16-bit grayscale PNG, used for raw probability maps."""
    arr = np.asarray(buffer)
    if arr.dtype != np.uint16 or arr.ndim != 2:
        raise ValueError(f"save_png16 expects 2-D uint16, got {arr.dtype} {arr.shape}")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(path, format="PNG")  # uint16 maps to 16-bit grayscale
    except OSError as e:
        raise OSError(f"cannot write image {path}: {e}") from e


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------

def _axis_coords(in_len: int, out_len: int) -> np.ndarray:
    # Half-pixel centers: source coordinate of output i is (i+0.5)*scale - 0.5,
    # clamped into [0, in_len-1].
    scale = in_len / out_len
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    return np.clip(src, 0.0, in_len - 1)


def resize_bilinear(img: Tensor4, out_h: int, out_w: int) -> Tensor4:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: output dims must be positive, got {out_h}x{out_w}")
    a = img.array
    sy = _axis_coords(img.h, out_h)
    y0 = np.floor(sy).astype(np.int64)
    fy = sy - y0
    y1 = np.minimum(y0 + 1, img.h - 1)
    a = a[:, :, y0, :] * (1.0 - fy)[None, None, :, None] + a[:, :, y1, :] * fy[None, None, :, None]
    sx = _axis_coords(img.w, out_w)
    x0 = np.floor(sx).astype(np.int64)
    fx = sx - x0
    x1 = np.minimum(x0 + 1, img.w - 1)
    a = a[:, :, :, x0] * (1.0 - fx)[None, None, None, :] + a[:, :, :, x1] * fx[None, None, None, :]
    return Tensor4(a)


def resize_nearest(img: Tensor4, out_h: int, out_w: int) -> Tensor4:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_nearest: output dims must be positive, got {out_h}x{out_w}")
    y = np.floor(_axis_coords(img.h, out_h) + 0.5).astype(np.int64)
    x = np.floor(_axis_coords(img.w, out_w) + 0.5).astype(np.int64)
    return Tensor4(np.ascontiguousarray(img.array[:, :, y, :][:, :, :, x]))


# ---------------------------------------------------------------------------
# Ingestion and splitting
# ---------------------------------------------------------------------------

def load_dataset(image_dir: str | Path, mask_dir: str | Path, target_h: int, target_w: int,
                 manifest: str | Path | None = None) -> Dataset:
    image_dir = Path(image_dir)
    mask_dir = Path(mask_dir)
    if manifest is not None:
        names = [ln.strip() for ln in Path(manifest).read_text().splitlines() if ln.strip()]
    else:
        names = sorted(p.name for p in image_dir.glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no PNG images found under {image_dir}")
    samples = []
    for name in names:
        img_path = image_dir / name
        mask_path = mask_dir / name
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask for {img_path}: expected {mask_path}")
        img = load_png(img_path)
        if img.ndim != 2:
            raise ValueError(f"{img_path}: expected 8-bit grayscale image")
        msk = load_png(mask_path)
        if msk.ndim != 2:
            raise ValueError(f"{mask_path}: expected 8-bit grayscale mask")
        image = resize_bilinear(Tensor4(img[None, None].astype(np.float64) / 255.0), target_h, target_w)
        mask = resize_nearest(Tensor4(msk[None, None].astype(np.float64) / 255.0), target_h, target_w)
        mask = Tensor4((mask.array > 0.5).astype(np.float64))
        samples.append(Sample(image=image, mask=mask, id=Path(name).stem))
    return Dataset(samples=samples, tags=[TRAIN] * len(samples))


def split_dataset(d: Dataset, train_fraction: float, seed: int) -> Dataset:
    """Re-tag samples as train/heldout; membership is a pure function of (seed, n)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"split_dataset: fraction must be in (0, 1), got {train_fraction}")
    n = len(d)
    k = int(math.floor(n * train_fraction))
    if k == 0 or k == n:
        raise ValueError(f"split_dataset: degenerate split {k}/{n - k} for n={n}, fraction={train_fraction}")
    order = Rng(seed, stream=DOMAIN_SPLIT).permutation(n)
    train_idx = set(order[:k])
    tags = [TRAIN if i in train_idx else HELDOUT for i in range(n)]
    return Dataset(samples=d.samples, tags=tags)


# ---------------------------------------------------------------------------
# Synthetic phantoms
# ---------------------------------------------------------------------------

def synth_phantom(seed: int, h: int, w: int, id: str | None = None) -> Sample:
    """Deterministic vein-like phantom: a bright elliptical wall on a dark field.

    Draw order on the phantom stream: outer semi-axis fractions (2 uniforms),
    rotation, thickness fraction, center offsets (2 uniforms), then one
    speckle normal per pixel in row-major order. The mask marks the wall
    annulus of the noiseless geometry; depth decay and clamped multiplicative
    speckle apply to the image only.
    """
    if h < 32 or w < 32 or h % 4 or w % 4:
        raise ShapeError(f"synth_phantom: dims must be >= 32 and divisible by 4, got {h}x{w}")
    rng = Rng(seed, stream=DOMAIN_PHANTOM)
    m = min(h, w)
    a = rng.uniform_in(*PHANTOM_AXIS_RANGE) * m
    b = rng.uniform_in(*PHANTOM_AXIS_RANGE) * m
    theta = rng.uniform_in(0.0, math.pi)
    thickness = max(rng.uniform_in(*PHANTOM_THICKNESS_RANGE) * a, PHANTOM_MIN_THICKNESS_PX)
    thickness = min(thickness, min(a, b) - 1.0)
    margin = max(a, b) + 2.0
    cy = margin + rng.uniform() * max(h - 1 - 2.0 * margin, 0.0)
    cx = margin + rng.uniform() * max(w - 1 - 2.0 * margin, 0.0)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)

    def annulus(t: float) -> tuple[np.ndarray, np.ndarray]:
        outer = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        inner = (u / (a - t)) ** 2 + (v / (b - t)) ** 2 <= 1.0
        return outer & ~inner, inner

    wall, lumen = annulus(thickness)
    # Thin draws on large canvases can undershoot the area contract; widen
    # the wall in whole-pixel steps until it holds.
    for _ in range(32):
        if wall.mean() >= PHANTOM_MIN_WALL_FRACTION or thickness >= min(a, b) - 1.0:
            break
        thickness = min(thickness + 1.0, min(a, b) - 1.0)
        wall, lumen = annulus(thickness)

    img = np.full((h, w), PHANTOM_BACKGROUND)
    img[lumen] = PHANTOM_LUMEN
    img[wall] = PHANTOM_WALL
    decay = np.exp(-PHANTOM_DEPTH_DECAY * yy / (h - 1))
    speckle = np.clip(1.0 + math.sqrt(PHANTOM_SPECKLE_VARIANCE) * rng.normal_array(h * w).reshape(h, w), 0.0, 2.0)
    img = np.clip(img * decay * speckle, 0.0, 1.0)

    return Sample(
        image=Tensor4(img[None, None]),
        mask=Tensor4(wall.astype(np.float64)[None, None]),
        id=id if id is not None else f"phantom-seed{seed}",
    )


def make_phantom_dataset(count: int, h: int, w: int, base_seed: int) -> Dataset:
    """``count`` phantoms; sample i uses seed base_seed + i."""
    samples = [synth_phantom(base_seed + i, h, w, id=f"phantom_{i:04d}") for i in range(count)]
    return Dataset(samples=samples, tags=[TRAIN] * count)


def write_phantom_corpus(out_dir: str | Path, count: int, h: int, w: int, base_seed: int) -> list[Path]:
    """Save a phantom corpus as images/ and masks/ PNG pairs; returns written paths."""
    out_dir = Path(out_dir)
    written = []
    for i in range(count):
        s = synth_phantom(base_seed + i, h, w, id=f"phantom_{i:04d}")
        img8 = np.round(s.image.array[0, 0] * 255.0).astype(np.uint8)
        msk8 = (s.mask.array[0, 0] * 255.0).astype(np.uint8)
        img_path = out_dir / "images" / f"{s.id}.png"
        msk_path = out_dir / "masks" / f"{s.id}.png"
        save_png(img8, img_path)
        save_png(msk8, msk_path)
        written += [img_path, msk_path]
    return written


# ---------------------------------------------------------------------------
# Boundary overlay
# ---------------------------------------------------------------------------

def _erode4(m: np.ndarray) -> np.ndarray:
    # A pixel survives only if it and its 4 neighbours are set; beyond the
    # border counts as unset.
    out = m.copy()
    out[1:, :] &= m[:-1, :]
    out[:-1, :] &= m[1:, :]
    out[:, 1:] &= m[:, :-1]
    out[:, :-1] &= m[:, 1:]
    out[0, :] = False
    out[-1, :] = False
    out[:, 0] = False
    out[:, -1] = False
    return out


def boundary_overlay(image: Tensor4, mask: Tensor4) -> np.ndarray:
    """Grayscale replication of the image with the mask boundary in pure red."""
    if image.shape != mask.shape:
        raise ShapeError(f"boundary_overlay: shape mismatch {image.shape} vs {mask.shape}")
    if image.n != 1 or image.c != 1:
        raise ShapeError(f"boundary_overlay: expected a single-sample (1,1,h,w) pair, got {image.shape}")
    mvals = mask.array[0, 0]
    if not np.all((mvals == 0.0) | (mvals == 1.0)):
        raise ValueError("boundary_overlay: mask must be binary")
    m = mvals.astype(bool)
    boundary = m & ~_erode4(m)
    gray = np.clip(np.round(image.array[0, 0] * 255.0), 0, 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[boundary] = (255, 0, 0)
    return rgb
