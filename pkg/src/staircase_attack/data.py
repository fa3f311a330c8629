"""Labeled image sets: IDX ingestion and a seeded synthetic generator."""

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

DEFAULT_CONTRAST = 0.3


class DataError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) in [-1, 1]
    labels: np.ndarray  # (N,)
    target_labels: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if len(self.images) != len(self.labels):
            raise DataError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("label out of range")
        if self.target_labels is not None:
            self.target_labels = np.asarray(self.target_labels, dtype=np.int64)
            t = self.target_labels
            if len(t) != len(self.labels):
                raise DataError("target labels differ in length")
            if t.size and (t.min() < 0 or t.max() >= self.num_classes):
                raise DataError("target label out of range")
            if np.any(t == self.labels):
                raise DataError("target label equals true label")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        indices = np.asarray(indices)
        t = None if self.target_labels is None else self.target_labels[indices]
        return LabeledDataset(self.images[indices], self.labels[indices], t, self.num_classes)

    def with_next_class_targets(self):
        """Targets (label + 1) mod num_classes."""
        return LabeledDataset(self.images, self.labels, (self.labels + 1) % self.num_classes, self.num_classes)


def _read(path):
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_idx(images_path, labels_path, num_classes=None):
    """
    Read an IDX image file (magic 0x803, u8, count x rows x cols) and an IDX
    label file (magic 0x801, u8). Pixels map to ``v / 127.5 - 1``.
    """
    img = _read(images_path)
    lab = _read(labels_path)
    if len(img) < 16:
        raise DataError("truncated image file header")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES:
        raise DataError(f"bad image magic 0x{magic:08x}")
    if len(lab) < 8:
        raise DataError("truncated label file header")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS:
        raise DataError(f"bad label magic 0x{lmagic:08x}")
    if count != lcount:
        raise DataError(f"count mismatch: {count} images vs {lcount} labels")
    n_pix = count * rows * cols
    if len(img) - 16 < n_pix:
        raise DataError("truncated image data")
    if len(lab) - 8 < count:
        raise DataError("truncated label data")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n_pix, offset=16)
    images = pixels.reshape(count, 1, rows, cols) / 127.5 - 1.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    return LabeledDataset(images, labels, num_classes=num_classes)


def write_idx(images_u8, labels_u8, images_path, labels_path):
    """Write u8 arrays (count x rows x cols, count) in IDX format."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    count, rows, cols = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES, count, rows, cols))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS, len(labels_u8)))
        f.write(labels_u8.tobytes())


def class_templates(classes, side, seed, contrast=DEFAULT_CONTRAST):
    """One Gaussian blob per class (peak +contrast on a -contrast background), centred on a ring with a seeded phase."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    radius = side / 4.0
    width = side / 8.0
    yy, xx = np.mgrid[0:side, 0:side] - (side - 1) / 2.0
    templates = np.empty((classes, 1, side, side))
    for c in range(classes):
        angle = phase + 2 * np.pi * c / classes
        cy, cx = radius * np.sin(angle), radius * np.cos(angle)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        templates[c, 0] = contrast * (2.0 * blob - 1.0)
    return templates


def synth_dataset(classes, per_class, side, seed, noise=0.1, split=0, contrast=DEFAULT_CONTRAST):
    """
    Class template plus N(0, noise^2) pixel noise, clipped to [-1, 1], in
    shuffled order. Templates depend on ``seed`` only; ``split`` selects an
    independent noise draw over the same templates (e.g. a fresh test set).
    """
    if classes < 2:
        raise DataError("need at least two classes")
    if side < 4:
        raise DataError("image side must be >= 4")
    if per_class < 1:
        raise DataError("need at least one sample per class")
    templates = class_templates(classes, side, seed, contrast)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 1, int(split))))
    labels = np.repeat(np.arange(classes), per_class)
    images = templates[labels] + noise * rng.standard_normal((len(labels), 1, side, side))
    order = rng.permutation(len(labels))
    images = np.clip(images[order], -1.0, 1.0)
    labels = labels[order]
    return LabeledDataset(images, labels, (labels + 1) % classes, classes)
