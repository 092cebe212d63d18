"""Dataset ingestion, balancing, splitting, augmentation and synthesis.

Images are kept as ``[3, H, W]`` arrays: uint8 rasters until
:func:`preprocess` turns them into real-valued ``[3, side, side]`` arrays
scaled to [0, 1].
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import netpbm
from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

AUGMENT_SUFFIXES = ("", "_r90", "_r180", "_r270", "_fh", "_fv")
SHAPES = ("disk", "ring", "square", "cross", "triangle", "diamond", "frame", "dots")
PIL_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class LabeledDataset:
    class_names: list[str]
    images: list[np.ndarray]
    labels: np.ndarray
    names: list[str]
    provenance: str = "ingested"
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels) or len(self.names) != len(self.labels):
            raise DataError("images, labels and names differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("class index out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.num_classes).tolist()

    def subset(self, idx, provenance: Optional[str] = None) -> "LabeledDataset":
        idx = [int(i) for i in idx]
        return replace(
            self,
            images=[self.images[i] for i in idx],
            labels=self.labels[idx] if idx else np.zeros(0, dtype=np.int64),
            names=[self.names[i] for i in idx],
            provenance=provenance or self.provenance,
            skipped=list(self.skipped),
        )

    def stacked(self, dtype=None) -> np.ndarray:
        """All images as one [N, 3, H, W] array; extents must agree."""
        if not self.images:
            raise DataError("empty dataset")
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise DataError(f"images have differing extents: {sorted(shapes)[:3]}")
        arr = np.stack(self.images)
        return arr if dtype is None else arr.astype(dtype)


def concat_datasets(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    if a.class_names != b.class_names:
        raise DataError("cannot concatenate datasets with different classes")
    return replace(a, images=a.images + b.images, labels=np.concatenate([a.labels, b.labels]),
                   names=a.names + b.names)


# -- ingestion ----------------------------------------------------------------
def read_image(path: PathLike) -> np.ndarray:
    """Decode one file to uint8 [3, H, W]; NetPBM always, common raster formats via Pillow."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:1] == b"P" and data[1:2] in (b"5", b"6"):
        return netpbm.decode(data, str(path))
    if path.suffix.lower() in PIL_SUFFIXES:
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise FormatError(f"{path}: Pillow is needed to read {path.suffix} files") from exc
        try:
            with Image.open(path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.uint8).transpose(2, 0, 1).copy()
        except Exception as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return netpbm.decode(data, str(path))


def load_dataset(root: PathLike) -> LabeledDataset:
    """Read a directory with one subdirectory per class.

    Classes and files are taken in lexicographic order. Unreadable files are
    logged and listed in ``skipped``; a class with no readable image is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not classes:
        raise DataError(f"{root}: no class subdirectories")
    images, labels, names, skipped = [], [], [], []
    for k, cname in enumerate(classes):
        files = sorted(p for p in (root / cname).iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise DataError(f"{root / cname}: empty class directory")
        n_ok = 0
        for f in files:
            try:
                img = read_image(f)
            except (FormatError, OSError) as exc:
                logger.warning("skipping %s: %s", f, exc)
                skipped.append((str(f), str(exc)))
                continue
            images.append(img)
            labels.append(k)
            names.append(f.stem)
            n_ok += 1
        if n_ok == 0:
            raise DataError(f"{root / cname}: no readable images")
    return LabeledDataset(classes, images, np.array(labels), names, "ingested", skipped)


def export_dataset(ds: LabeledDataset, root: PathLike) -> int:
    """Write uint8 images as P6 files under ``root/<class>/<name>.ppm``."""
    root = Path(root)
    for cname in ds.class_names:
        (root / cname).mkdir(parents=True, exist_ok=True)
    for img, lab, name in zip(ds.images, ds.labels, ds.names):
        netpbm.write(root / ds.class_names[lab] / f"{name}.ppm", img)
    return len(ds)


# -- balancing and splitting --------------------------------------------------
def balance_classes(ds: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Truncate every class to the smallest class size by seeded sampling without replacement."""
    counts = ds.class_counts()
    if min(counts) < 1:
        raise DataError("every class needs at least one sample to balance")
    target = min(counts)
    rng = np.random.default_rng(seed)
    keep = []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if len(idx) > target:
            idx = rng.choice(idx, size=target, replace=False)
        keep.append(idx)
    return ds.subset(np.sort(np.concatenate(keep)))


def split_counts(n: int, fraction: float) -> tuple[int, int]:
    n_train = int(np.floor(fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    return n_train, n - n_train


def split_train_test(ds: LabeledDataset, fraction: float = 0.8, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-class seeded shuffle, then the first round(fraction * n) go to train.

    Both parts keep the input's sample order. Each part gets at least one
    sample per class.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"train fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if len(idx) < 2:
            raise DataError(f"class {ds.class_names[k]!r} has {len(idx)} sample(s); need at least 2 to split")
        perm = idx[rng.permutation(len(idx))]
        n_train, _ = split_counts(len(idx), fraction)
        train.append(perm[:n_train])
        test.append(perm[n_train:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


# -- augmentation -------------------------------------------------------------
def rotate90(img: np.ndarray, times: int = 1) -> np.ndarray:
    """Rotate a [C, H, W] image clockwise by ``times`` x 90 degrees."""
    return np.ascontiguousarray(np.rot90(img, k=-times, axes=(1, 2)))


def flip_h(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, :, ::-1])


def flip_v(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1, :])


def augment_image(img: np.ndarray) -> list[np.ndarray]:
    """Original, r90, r180, r270, horizontal flip, vertical flip."""
    if img.shape[1] != img.shape[2]:
        raise DataError(f"augmentation needs square images, got {img.shape[1]}x{img.shape[2]}")
    return [img, rotate90(img, 1), rotate90(img, 2), rotate90(img, 3), flip_h(img), flip_v(img)]


def augment(ds: LabeledDataset) -> LabeledDataset:
    images, labels, names = [], [], []
    for img, lab, name in zip(ds.images, ds.labels, ds.names):
        for out, suffix in zip(augment_image(img), AUGMENT_SUFFIXES):
            images.append(out)
            labels.append(lab)
            names.append(name + suffix)
    return LabeledDataset(list(ds.class_names), images, np.array(labels, dtype=np.int64), names,
                          "augmented", list(ds.skipped))


# -- preprocessing --------------------------------------------------------------
def center_crop(img: np.ndarray) -> np.ndarray:
    """Largest centered square; odd surplus drops one more on the right/bottom."""
    _, h, w = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[:, top : top + s, left : left + s]


def resize_nearest(img: np.ndarray, side: int) -> np.ndarray:
    """Nearest-neighbour resample of a [C, H, W] array; source index floor(i * H / side)."""
    _, h, w = img.shape
    rows = (np.arange(side) * h) // side
    cols = (np.arange(side) * w) // side
    return img[:, rows[:, None], cols[None, :]]


def preprocess(ds: LabeledDataset, side: int, dtype=np.float64) -> LabeledDataset:
    if side < 1:
        raise DataError(f"side must be positive, got {side}")
    out = []
    for img in ds.images:
        sq = center_crop(img)
        if sq.shape[1] != side:
            sq = resize_nearest(sq, side)
        if np.issubdtype(sq.dtype, np.integer):
            out.append(sq.astype(dtype) / np.asarray(255.0, dtype=dtype))
        else:
            out.append(np.asarray(sq, dtype=dtype))
    return replace(ds, images=out)


# -- synthetic data ---------------------------------------------------------------
def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    d = np.hypot(u, v)
    if shape == "disk":
        return d <= 1.0
    if shape == "ring":
        return (d <= 1.0) & (d >= 0.6)
    if shape == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.85
    if shape == "cross":
        return ((np.abs(u) <= 0.3) & (np.abs(v) <= 1.0)) | ((np.abs(v) <= 0.3) & (np.abs(u) <= 1.0))
    if shape == "triangle":
        return (v <= 0.8) & (np.abs(u) <= (v + 1.0) / 2.0)
    if shape == "diamond":
        return np.abs(u) + np.abs(v) <= 1.0
    if shape == "frame":
        m = np.maximum(np.abs(u), np.abs(v))
        return (m <= 0.9) & (m >= 0.6)
    if shape == "dots":
        if rng.random() < 0.5:
            u, v = v, u
        return (np.hypot(u - 0.55, v) <= 0.4) | (np.hypot(u + 0.55, v) <= 0.4)
    raise ValueError(shape)


def synth_generate(num_classes: int, per_class: int, side: int, seed: int = 0) -> LabeledDataset:
    """Seeded images of one parametric shape per class on a noisy light background.

    Position, scale and stain intensity are jittered per sample and every
    pixel gets Gaussian noise. Class ``k`` is named ``c<k>_<shape>``.
    """
    if not 2 <= num_classes <= len(SHAPES):
        raise DataError(f"synthetic generator supports 2..{len(SHAPES)} classes, got {num_classes}")
    if side < 16:
        raise DataError(f"synthetic side must be >= 16, got {side}")
    if per_class < 1:
        raise DataError("per_class must be positive")
    rng = np.random.default_rng(seed)
    names = [f"c{k}_{SHAPES[k]}" for k in range(num_classes)]
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    background = np.array([232.0, 222.0, 236.0])[:, None, None]
    stain = np.array([120.0, 62.0, 150.0])[:, None, None]
    images, labels, stems = [], [], []
    for k in range(num_classes):
        for i in range(per_class):
            cy, cx = side / 2 + rng.uniform(-0.1, 0.1, size=2) * side
            radius = side * rng.uniform(0.26, 0.36)
            mask = _shape_mask(SHAPES[k], (xx - cx) / radius, (yy - cy) / radius, rng)
            level = rng.uniform(0.8, 1.2)
            img = np.where(mask[None], stain * level, background)
            img = img + rng.normal(0.0, 8.0, size=img.shape)
            images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
            labels.append(k)
            stems.append(f"{i:05d}")
    return LabeledDataset(names, images, np.array(labels), stems, "synthetic")
