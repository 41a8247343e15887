"""Dataset ingestion for CIFAR-10, STL10, and Kodak.

Loaders read the standard public on-disk distributions from a configured
root (env var DATA_ROOT or an explicit path); nothing here touches the
network. Images are delivered channels-first in [0, 1]. Iteration order is
a deterministic function of (seed, epoch), so epochs are reproducible and
resumable. Handles are read-only after construction and safe to share.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import DataError

CIFAR10_DIR = "cifar-10-batches-py"
STL10_DIR = "stl10_binary"
KODAK_DIR = "kodak"


def resolve_data_root(root) -> str:
    if root is not None:
        return os.fspath(root)
    return os.environ.get("DATA_ROOT", "./data")


@dataclass
class DatasetHandle:
    """In-memory image collection with deterministic batching.

    images: uint8 array (N, C, H, W) for fixed-size sets, or a list of
    uint8 (C, H, W) arrays when shapes vary (Kodak keeps both orientations).
    labels is None for unlabeled sets.
    """

    name: str
    split: str
    images: np.ndarray | list
    labels: np.ndarray | None = None
    seed: int = 0

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shapes(self) -> set:
        if isinstance(self.images, np.ndarray):
            return {tuple(self.images.shape[1:])}
        return {tuple(im.shape) for im in self.images}

    def image(self, index: int) -> torch.Tensor:
        """Single image as float32 (C, H, W) in [0, 1]."""
        return torch.from_numpy(np.asarray(self.images[index], dtype=np.float32) / 255.0)

    def label(self, index: int) -> int | None:
        return None if self.labels is None else int(self.labels[index])

    def epoch_permutation(self, epoch: int) -> np.ndarray:
        """Permutation of the indices for one epoch; a pure function of
        (seed, epoch), so resuming at an epoch boundary replays exactly."""
        rng = np.random.default_rng([self.seed, epoch])
        return rng.permutation(len(self))

    def iter_batches(self, batch_size: int, shuffle: bool = True, epoch: int = 0,
                     limit: int | None = None):
        """Yield (images, labels) batches; labels is None for unlabeled sets.

        All images in a batch must share one shape (true for cifar10/stl10;
        use batch_size=1 for kodak).
        """
        order = self.epoch_permutation(epoch) if shuffle else np.arange(len(self))
        if limit is not None:
            order = order[:limit]
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if isinstance(self.images, np.ndarray):
                batch = self.images[idx]
            else:
                batch = np.stack([self.images[i] for i in idx])
            x = torch.from_numpy(batch.astype(np.float32) / 255.0)
            y = None if self.labels is None else torch.from_numpy(self.labels[idx].astype(np.int64))
            yield x, y

    def subset(self, n: int, seed: int | None = None) -> "DatasetHandle":
        """Deterministic fixed subset of n items (seeded draw without replacement)."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        idx = rng.choice(len(self), size=min(n, len(self)), replace=False)
        if isinstance(self.images, np.ndarray):
            images = self.images[idx]
        else:
            images = [self.images[i] for i in idx]
        labels = None if self.labels is None else self.labels[idx]
        return DatasetHandle(self.name, self.split, images, labels, seed=self.seed)


def from_arrays(images: np.ndarray, labels=None, name: str = "memory", split: str = "all",
                seed: int = 0) -> DatasetHandle:
    """Wrap uint8 (N, C, H, W) arrays as a handle (tests, demos, ad-hoc data)."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise DataError("from_arrays expects uint8 images (N, C, H, W)")
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    return DatasetHandle(name, split, images, labels, seed=seed)


def _missing(root: str, expected: str) -> DataError:
    return DataError(
        f"dataset files not found under {root!r}; expected layout: {expected}. "
        f"Run `semcom fetch-datasets --root {root}` on a machine with network access."
    )


def _load_cifar10(root: str, split: str) -> tuple[np.ndarray, np.ndarray]:
    base = os.path.join(root, CIFAR10_DIR)
    names = {
        "train": [f"data_batch_{i}" for i in range(1, 6)],
        "test": ["test_batch"],
    }
    if split == "all":
        names = {"all": names["train"] + names["test"]}
    files = [os.path.join(base, n) for n in names[split if split in names else "train"]]
    if not all(os.path.exists(f) for f in files):
        raise _missing(root, f"{CIFAR10_DIR}/data_batch_1..5 and test_batch (python pickle version)")
    images, labels = [], []
    for f in files:
        try:
            with open(f, "rb") as fh:
                batch = pickle.load(fh, encoding="latin1")
            images.append(batch["data"].reshape(-1, 3, 32, 32))
            labels.append(np.asarray(batch["labels"], dtype=np.int64))
        except Exception as exc:
            raise DataError(f"corrupt CIFAR-10 batch file {f}: {exc}") from exc
    return np.concatenate(images).astype(np.uint8), np.concatenate(labels)


def _load_stl10(root: str, split: str) -> tuple[np.ndarray, np.ndarray | None]:
    base = os.path.join(root, STL10_DIR)
    prefix = {"train": "train", "test": "test"}.get(split)
    if prefix is None:
        raise DataError(f"stl10 split must be train or test, got {split!r}")
    x_path = os.path.join(base, f"{prefix}_X.bin")
    y_path = os.path.join(base, f"{prefix}_y.bin")
    if not (os.path.exists(x_path) and os.path.exists(y_path)):
        raise _missing(root, f"{STL10_DIR}/train_X.bin, train_y.bin, test_X.bin, test_y.bin")
    raw = np.fromfile(x_path, dtype=np.uint8)
    if raw.size % (3 * 96 * 96) != 0:
        raise DataError(f"corrupt STL10 image file {x_path}: size {raw.size}")
    # stored column-major per channel: (N, 3, 96, 96) needs a transpose
    images = raw.reshape(-1, 3, 96, 96).transpose(0, 1, 3, 2)
    labels = np.fromfile(y_path, dtype=np.uint8).astype(np.int64) - 1  # 1-based on disk
    if len(labels) != len(images):
        raise DataError(f"STL10 image/label count mismatch under {base}")
    return np.ascontiguousarray(images), labels


def _load_kodak(root: str) -> list:
    from PIL import Image

    base = os.path.join(root, KODAK_DIR)
    paths = [os.path.join(base, f"kodim{i:02d}.png") for i in range(1, 25)]
    if not all(os.path.exists(p) for p in paths):
        raise _missing(root, f"{KODAK_DIR}/kodim01.png .. kodim24.png")
    images = []
    for p in paths:
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise DataError(f"corrupt Kodak image {p}: {exc}") from exc
        images.append(arr.transpose(2, 0, 1))  # orientation preserved
    return images


def load_dataset(name: str, split: str, seed: int = 0, root=None) -> DatasetHandle:
    """Load one of {cifar10, stl10, kodak} from the data root.

    Labels are present for cifar10/stl10 and absent for kodak (kodak is
    evaluation-only and ignores the split argument, reported as "all").
    """
    root = resolve_data_root(root)
    if name == "cifar10":
        if split not in ("train", "test", "all"):
            raise DataError(f"cifar10 split must be train/test/all, got {split!r}")
        images, labels = _load_cifar10(root, split)
        return DatasetHandle("cifar10", split, images, labels, seed=seed)
    if name == "stl10":
        images, labels = _load_stl10(root, split)
        return DatasetHandle("stl10", split, images, labels, seed=seed)
    if name == "kodak":
        return DatasetHandle("kodak", "all", _load_kodak(root), None, seed=seed)
    raise DataError(f"unknown dataset {name!r}; expected cifar10, stl10, or kodak")
