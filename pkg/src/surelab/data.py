"""Synthetic datasets, long-tail subsampling, label noise, corruptions and CIFAR-10 ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

CIFAR_RECORD_BYTES = 3073
CIFAR_IMAGE_SHAPE = (3, 32, 32)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # [N, D] float64
    labels: np.ndarray  # [N] int64
    sample_ids: np.ndarray  # [N] int64
    num_classes: int
    image_shape: Optional[tuple[int, int, int]] = None
    original_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        n = len(self.inputs)
        if len(self.labels) != n or len(self.sample_ids) != n:
            raise DataError("inputs, labels and sample_ids must have equal length")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            sample_ids=self.sample_ids[idx],
            original_labels=None if self.original_labels is None else self.original_labels[idx],
        )

    def reindexed(self) -> "Dataset":
        """Copy with sample ids renumbered 0..N-1 (needed for per-sample state)."""
        return replace(self, sample_ids=np.arange(len(self), dtype=np.int64))


# -- generators --------------------------------------------------------------------


def gen_gaussian_blobs(
    num_classes: int, per_class: int, dim: int, gap: float, seed: int
) -> Dataset:
    """Unit-variance Gaussian classes whose means sit ``gap`` apart.

    The means are ``gap / sqrt(2)`` times orthonormal directions (a regular
    simplex arrangement), so every pair of means is exactly ``gap`` apart
    when ``dim >= num_classes``; otherwise seeded random unit directions
    scaled the same way are used.
    """
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise DataError("need K >= 2, per_class >= 1, dim >= 1")
    rng = np.random.default_rng(seed)
    if dim >= num_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        dirs = q.T
    else:
        dirs = rng.standard_normal((num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = dirs * (gap / math.sqrt(2.0))
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels] + rng.standard_normal((len(labels), dim))
    order = rng.permutation(len(labels))
    return Dataset(x[order], labels[order], np.arange(len(labels)), num_classes)


def gen_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Interleaved unit half-circles; class 0 upper, class 1 lower (shifted by (1, 0.5))."""
    if n % 2 or n < 2:
        raise DataError("two moons needs an even n >= 2")
    rng = np.random.default_rng(seed)
    h = n // 2
    t0 = rng.uniform(0.0, math.pi, h)
    t1 = rng.uniform(0.0, math.pi, h)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower])
    if noise > 0:
        x = x + rng.normal(0.0, noise, x.shape)
    labels = np.repeat([0, 1], h)
    order = rng.permutation(n)
    return Dataset(x[order], labels[order], np.arange(n), 2)


# -- long tail -----------------------------------------------------------------------


@dataclass(frozen=True)
class LongTailProfile:
    imbalance_factor: float
    counts: tuple[int, ...]

    @property
    def mu(self) -> float:
        k = len(self.counts)
        return self.imbalance_factor ** (-1.0 / (k - 1))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def long_tail_counts(n_per_class: int, num_classes: int, imbalance_factor: float) -> list[int]:
    """round(N * mu**i) with mu = IF**(-1/(K-1)); class 0 is the head."""
    if imbalance_factor < 1:
        raise DataError("imbalance factor must be >= 1")
    mu = imbalance_factor ** (-1.0 / (num_classes - 1))
    return [max(1, _round_half_up(n_per_class * mu**i)) for i in range(num_classes)]


def apply_long_tail(ds: Dataset, imbalance_factor: float, seed: int) -> tuple[Dataset, LongTailProfile]:
    counts = ds.class_counts()
    if len(set(counts.tolist())) != 1:
        raise DataError("long-tail subsampling needs a class-balanced dataset")
    n = int(counts[0])
    target = long_tail_counts(n, ds.num_classes, imbalance_factor)
    if imbalance_factor == 1:
        return ds, LongTailProfile(1.0, tuple(target))
    if n * imbalance_factor ** (-1.0) < 0.5:
        raise DataError(f"IF={imbalance_factor} leaves the tail class with no samples (N={n})")
    rng = np.random.default_rng(seed)
    keep = []
    for k, c in enumerate(target):
        idx = np.flatnonzero(ds.labels == k)
        keep.append(np.sort(rng.choice(idx, size=c, replace=False)))
    keep_idx = np.sort(np.concatenate(keep))
    return ds.subset(keep_idx), LongTailProfile(float(imbalance_factor), tuple(target))


# -- label noise -----------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    kind: str = "symmetric"

    def __post_init__(self):
        if not 0 <= self.rate <= 1:
            raise DataError(f"noise rate must lie in [0, 1], got {self.rate}")
        if self.kind != "symmetric":
            raise DataError(f"unsupported noise kind {self.kind!r}")


def inject_label_noise(ds: Dataset, spec: NoiseSpec, seed: int) -> Dataset:
    """Flip each label with probability ``rate`` to a uniformly chosen other class."""
    if ds.num_classes < 2:
        raise DataError("label noise needs K >= 2")
    rng = np.random.default_rng(seed)
    flip = rng.random(len(ds)) < spec.rate
    offset = rng.integers(1, ds.num_classes, size=len(ds))
    noisy = np.where(flip, (ds.labels + offset) % ds.num_classes, ds.labels)
    original = ds.original_labels if ds.original_labels is not None else ds.labels.copy()
    return replace(ds, labels=noisy, original_labels=original)


# -- corruptions --------------------------------------------------------------------------

CORRUPTIONS = ("gaussian_noise", "impulse_noise", "box_blur", "brightness", "contrast")

# Five-step intensity ladders, strictly increasing with severity.
GAUSSIAN_SIGMA = (0.08, 0.12, 0.18, 0.26, 0.38)
IMPULSE_FRACTION = (0.01, 0.03, 0.06, 0.10, 0.17)
BLUR_MIX = (0.2, 0.4, 0.6, 0.8, 1.0)  # weight of the blurred copy; kernel grows 3x3 -> 5x5
BLUR_KERNEL = (3, 3, 3, 5, 5)
BRIGHTNESS_SHIFT = (0.25, 0.5, 0.75, 1.0, 1.25)
CONTRAST_GAIN = (0.8, 0.65, 0.5, 0.35, 0.2)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise DataError(f"unknown corruption {self.kind!r}; choose from {CORRUPTIONS}")
        if not 1 <= int(self.severity) <= 5:
            raise DataError(f"severity must be 1..5, got {self.severity}")


def _box_blur_rows(x: np.ndarray, k: int) -> np.ndarray:
    """Moving average along the feature axis (1-D grid), edge-padded."""
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad)), mode="edge")
    c = np.cumsum(np.pad(xp, ((0, 0), (1, 0))), axis=1)
    return (c[:, k:] - c[:, :-k]) / k


def _box_blur_images(x: np.ndarray, shape: tuple[int, int, int], k: int) -> np.ndarray:
    n = len(x)
    img = x.reshape((n,) + shape)
    pad = k // 2
    p = np.pad(img, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    h, w = shape[1], shape[2]
    out = np.zeros_like(img)
    for i in range(k):
        for j in range(k):
            out += p[:, :, i : i + h, j : j + w]
    return (out / (k * k)).reshape(n, -1)


def corrupt(
    ds: Dataset,
    spec: CorruptionSpec,
    seed: int,
    clip: Optional[tuple[float, float]] = None,
    feature_scale: Optional[float] = None,
) -> Dataset:
    """Apply one corruption at one severity; labels are untouched.

    Intensities are expressed relative to ``feature_scale`` (default: the
    standard deviation of all input values). ``clip`` bounds the output,
    e.g. ``(0, 1)`` for pixel data; unbounded features are left unclipped.
    Blur treats flat inputs as a 1-D grid and image inputs as 2-D.
    """
    rng = np.random.default_rng(seed)
    x = ds.inputs
    s = int(spec.severity) - 1
    scale = float(np.std(x)) if feature_scale is None else float(feature_scale)
    if scale <= 0:
        scale = 1.0
    if spec.kind == "gaussian_noise":
        y = x + rng.normal(0.0, GAUSSIAN_SIGMA[s] * scale, x.shape)
    elif spec.kind == "impulse_noise":
        hit = rng.random(x.shape) < IMPULSE_FRACTION[s]
        lo, hi = (clip if clip is not None else (x.min(), x.max()))
        salt = rng.random(x.shape) < 0.5
        y = np.where(hit, np.where(salt, hi, lo), x)
    elif spec.kind == "box_blur":
        if x.shape[1] < 2:
            raise DataError("box_blur needs grid-shaped inputs with at least 2 features")
        k = BLUR_KERNEL[s]
        if ds.image_shape is not None:
            blurred = _box_blur_images(x, ds.image_shape, k)
        else:
            blurred = _box_blur_rows(x, k)
        y = (1 - BLUR_MIX[s]) * x + BLUR_MIX[s] * blurred
    elif spec.kind == "brightness":
        y = x + BRIGHTNESS_SHIFT[s] * scale
    else:  # contrast
        mu = x.mean(axis=1, keepdims=True)
        y = mu + CONTRAST_GAIN[s] * (x - mu)
    if clip is not None:
        y = np.clip(y, *clip)
    return replace(ds, inputs=y)


def shift_brightness(ds: Dataset, delta: float) -> Dataset:
    return replace(ds, inputs=ds.inputs + delta)


# -- CIFAR-10 binary ------------------------------------------------------------------------


def read_cifar10_binary(path: Union[str, Path]) -> Dataset:
    """Parse the CIFAR-10 binary layout: per record 1 label byte + 3072 pixel bytes.

    Pixels are channel-major (R plane, G plane, B plane, each 32x32 row-major)
    and are scaled to [0, 1].
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES:
        raise DataError(
            f"{path}: truncated file ({raw.size} bytes is not a positive multiple of {CIFAR_RECORD_BYTES})"
        )
    rec = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"{path}: label byte {labels.max()} > 9")
    pixels = rec[:, 1:].astype(np.float64) / 255.0
    return Dataset(pixels, labels, np.arange(len(labels)), 10, image_shape=CIFAR_IMAGE_SHAPE)


def write_cifar10_binary(ds: Dataset, path: Union[str, Path]) -> Path:
    """Inverse of :func:`read_cifar10_binary` for pixel values on the 1/255 grid."""
    px = np.rint(ds.inputs * 255.0)
    if px.shape[1] != CIFAR_RECORD_BYTES - 1 or px.min() < 0 or px.max() > 255:
        raise DataError("inputs must be 3072 pixel values in [0, 1]")
    rec = np.concatenate([ds.labels[:, None], px], axis=1).astype(np.uint8)
    path = Path(path)
    rec.tofile(path)
    return path


# -- splits and CSV -----------------------------------------------------------------------------


@dataclass
class SplitInfo:
    stratified: bool = True
    warnings: list[str] = field(default_factory=list)


def train_val_split(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset, SplitInfo]:
    """Seeded stratified split; every class contributes round(fraction * count).

    Falls back to an unstratified split (recorded in the returned info) when
    a class is too small to give at least one sample to each side.
    """
    if not 0 < val_fraction < 1:
        raise DataError("val_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    info = SplitInfo()
    counts = ds.class_counts()
    present = counts[counts > 0]
    if np.any(present < 2) or np.any(np.floor(present * val_fraction + 0.5) < 1):
        info.stratified = False
        info.warnings.append("class too small for stratified split; used unstratified split")
        perm = rng.permutation(len(ds))
        n_val = max(1, _round_half_up(len(ds) * val_fraction))
        val_idx = perm[:n_val]
    else:
        val_parts = []
        for k in range(ds.num_classes):
            idx = np.flatnonzero(ds.labels == k)
            if idx.size == 0:
                continue
            n_val = _round_half_up(idx.size * val_fraction)
            val_parts.append(rng.permutation(idx)[:n_val])
        val_idx = np.concatenate(val_parts)
    mask = np.zeros(len(ds), dtype=bool)
    mask[val_idx] = True
    return ds.subset(np.flatnonzero(~mask)), ds.subset(np.flatnonzero(mask)), info


def export_csv(ds: Dataset, path: Union[str, Path]) -> Path:
    """Write ``sample_id,label,f0,f1,...`` with round-trippable floats."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label"] + [f"f{i}" for i in range(ds.dim)])
        for sid, y, row in zip(ds.sample_ids, ds.labels, ds.inputs):
            w.writerow([int(sid), int(y)] + [repr(float(v)) for v in row])
    return path


def import_csv(path: Union[str, Path], num_classes: Optional[int] = None) -> Dataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["sample_id", "label"]:
            raise DataError(f"{path}: header must start with sample_id,label")
        rows = [row for row in r if row]
    ids = np.array([int(row[0]) for row in rows], dtype=np.int64)
    labels = np.array([int(row[1]) for row in rows], dtype=np.int64)
    x = np.array([[float(v) for v in row[2:]] for row in rows], dtype=np.float64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(x.reshape(len(rows), len(header) - 2), labels, ids, k)
