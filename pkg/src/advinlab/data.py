"""Dataset ingestion: CIFAR-10 binary batches and procedural glyph sets.

The glyph set is the desk-scale workhorse: each class is a fixed geometric
template (bars, crosses, rings, ...) drawn at a random offset with additive
clipped Gaussian noise. It trains in minutes on a CPU while still showing
the robust/non-robust feature phenomena the poison generators rely on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .util import FNV_OFFSET, fnv1a64


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, K)
    num_classes: int
    split: str  # "train" | "test"
    meta: dict = field(default_factory=dict)
    _hash: int | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError(f"images {self.images.shape} vs labels {self.labels.shape}")
        if not np.all(np.isfinite(self.images)):
            raise ValueError("dataset contains non-finite pixels")
        if len(self.images) and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def content_hash(self) -> int:
        """64-bit FNV-1a over the serialized record stream (platform stable)."""
        if self._hash is None:
            h = FNV_OFFSET
            for image, label in zip(self.images, self.labels):
                h = fnv1a64(T.tensor_bytes(image), state=h)
                h = fnv1a64(struct.pack("<I", int(label)), state=h)
            self._hash = h
        return self._hash


# ---------------------------------------------------------------------------
# Glyph templates. Each painter fills a (side, side) canvas with {0, 1}.
# ---------------------------------------------------------------------------


def _grid(side):
    return np.meshgrid(np.arange(side), np.arange(side), indexing="ij")


def _hbar(side):
    out = np.zeros((side, side), dtype=np.float32)
    t = max(1, side // 8)
    out[side // 2 - t : side // 2 + t, :] = 1.0
    return out


def _vbar(side):
    return _hbar(side).T.copy()


def _cross(side):
    return np.maximum(_hbar(side), _vbar(side))


def _diag_x(side):
    i, j = _grid(side)
    t = max(1, side // 8)
    return ((np.abs(i - j) < t) | (np.abs(i + j - side + 1) < t)).astype(np.float32)


def _ring(side):
    i, j = _grid(side)
    d = np.sqrt((i - (side - 1) / 2) ** 2 + (j - (side - 1) / 2) ** 2)
    return (np.abs(d - side / 3.2) < max(1.0, side / 10)).astype(np.float32)


def _disk(side):
    i, j = _grid(side)
    d = np.sqrt((i - (side - 1) / 2) ** 2 + (j - (side - 1) / 2) ** 2)
    return (d <= side / 4).astype(np.float32)


def _frame(side):
    out = np.zeros((side, side), dtype=np.float32)
    m, t = side // 4, max(1, side // 10)
    out[m : side - m, m : side - m] = 1.0
    out[m + t : side - m - t, m + t : side - m - t] = 0.0
    return out


def _checker(side):
    i, j = _grid(side)
    block = max(2, side // 4)
    return (((i // block) + (j // block)) % 2).astype(np.float32)


def _triangle(side):
    i, j = _grid(side)
    return (i >= j).astype(np.float32) * (i + j >= side - 1).astype(np.float32)


def _dots(side):
    i, j = _grid(side)
    r = max(1.0, side / 8)
    out = np.zeros((side, side), dtype=np.float32)
    for ci in (side / 4, 3 * side / 4):
        for cj in (side / 4, 3 * side / 4):
            out = np.maximum(out, ((i - ci) ** 2 + (j - cj) ** 2 <= r**2).astype(np.float32))
    return out


def _double_bar(side):
    out = np.zeros((side, side), dtype=np.float32)
    t = max(1, side // 10)
    out[side // 4 - t : side // 4 + t, :] = 1.0
    out[3 * side // 4 - t : 3 * side // 4 + t, :] = 1.0
    return out


def _corner_l(side):
    out = np.zeros((side, side), dtype=np.float32)
    t = max(1, side // 6)
    out[:, :t] = 1.0
    out[-t:, :] = 1.0
    return out


GLYPH_PAINTERS = [_hbar, _vbar, _cross, _diag_x, _ring, _disk, _frame,
                  _checker, _triangle, _dots, _double_bar, _corner_l]


def glyph_templates(num_classes: int, side: int) -> np.ndarray:
    """(K, side, side) binary templates, one per class."""
    if num_classes > len(GLYPH_PAINTERS):
        raise ValueError(f"at most {len(GLYPH_PAINTERS)} glyph classes, asked for {num_classes}")
    if side < 8:
        raise ValueError("glyph side must be >= 8")
    return np.stack([GLYPH_PAINTERS[c](side) for c in range(num_classes)])


def _render_split(templates, n_per_class, noise_std, jitter, rng, split):
    k, side = templates.shape[0], templates.shape[1]
    images = np.empty((k * n_per_class, 1, side, side), dtype=np.float32)
    labels = np.repeat(np.arange(k, dtype=np.int64), n_per_class)
    idx = 0
    for c in range(k):
        for _ in range(n_per_class):
            canvas = templates[c]
            if jitter > 0:
                dy, dx = rng.integers(-jitter, jitter + 1, size=2)
                canvas = np.roll(canvas, (int(dy), int(dx)), axis=(0, 1))
            if noise_std > 0:
                canvas = canvas + rng.normal(0.0, noise_std, size=canvas.shape)
            images[idx, 0] = np.clip(canvas, 0.0, 1.0)
            idx += 1
    return LabeledDataset(images, labels, k, split)


def make_glyphset(num_classes: int, n_per_class: int, side: int = 16,
                  noise_std: float = 0.1, seed: int = 0,
                  n_test_per_class: int | None = None,
                  jitter: int | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    """Procedural K-class image set; train and test use disjoint seed streams."""
    templates = glyph_templates(num_classes, side)
    if jitter is None:
        jitter = side // 8
    if n_test_per_class is None:
        n_test_per_class = max(1, n_per_class // 5)
    train_rng, test_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    train = _render_split(templates, n_per_class, noise_std, jitter, train_rng, "train")
    test = _render_split(templates, n_test_per_class, noise_std, jitter, test_rng, "test")
    return train, test


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches: 1 label byte + 1024 R + 1024 G + 1024 B per record.
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 3073
_CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST_FILES = ["test_batch.bin"]


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % _CIFAR_RECORD:
        raise ValueError(f"{path} is truncated: {len(raw)} bytes is not a multiple of {_CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(root) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the binary-format batches from ``root`` (scaled to [0, 1])."""
    root = Path(root)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    splits = []
    for names, split in [(_CIFAR_TRAIN_FILES, "train"), (_CIFAR_TEST_FILES, "test")]:
        images, labels = [], []
        for name in names:
            path = root / name
            if not path.is_file():
                raise FileNotFoundError(f"missing CIFAR-10 batch file {path}")
            imgs, labs = _read_cifar_file(path)
            images.append(imgs)
            labels.append(labs)
        splits.append(LabeledDataset(np.concatenate(images), np.concatenate(labels), 10, split))
    return splits[0], splits[1]


def subset(dataset: LabeledDataset, n_per_class: int, seed: int) -> LabeledDataset:
    """Class-balanced random subset; chosen indices recorded in ``meta``."""
    chosen: list[np.ndarray] = []
    rng = np.random.default_rng(seed)
    for c in range(dataset.num_classes):
        pool = np.flatnonzero(dataset.labels == c)
        if len(pool) < n_per_class:
            raise ValueError(f"class {c} has {len(pool)} examples, needs {n_per_class}")
        chosen.append(rng.choice(pool, size=n_per_class, replace=False))
    indices = np.sort(np.concatenate(chosen))
    return LabeledDataset(dataset.images[indices], dataset.labels[indices],
                          dataset.num_classes, dataset.split,
                          meta={"source_indices": indices.tolist()})


# ---------------------------------------------------------------------------
# Folder-of-tensors export/ingest (shared record format with poison archives).
# ---------------------------------------------------------------------------


def save_dataset(dataset: LabeledDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_classes": dataset.num_classes,
        "split": dataset.split,
        "count": len(dataset),
        "labels": dataset.labels.tolist(),
        "content_hash": format(dataset.content_hash(), "016x"),
        "meta": dataset.meta,
    }
    (directory / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    with open(directory / "images.bin", "wb") as fh:
        for image in dataset.images:
            T.write_tensor(fh, image)


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    meta = json.loads((directory / "metadata.json").read_text())
    labels = np.asarray(meta["labels"], dtype=np.int64)
    images = []
    with open(directory / "images.bin", "rb") as fh:
        for _ in range(meta["count"]):
            images.append(T.read_tensor(fh))
    ds = LabeledDataset(np.stack(images) if images else np.zeros((0, 1, 8, 8), np.float32),
                        labels, meta["num_classes"], meta["split"], meta.get("meta", {}))
    expected = int(meta["content_hash"], 16)
    if ds.content_hash() != expected:
        raise ValueError(f"dataset hash mismatch: file says {meta['content_hash']}, "
                         f"loaded {format(ds.content_hash(), '016x')}")
    return ds
