"""Shared fixtures: synthetic datasets, natural-image crops, tiny models."""

import os

import numpy as np
import pytest

from semcom.backbone import new_backbone
from semcom.datasets import from_arrays, load_dataset, resolve_data_root


def natural_crops(n: int, size: int, seed: int = 0) -> np.ndarray:
    """uint8 (n, 3, size, size) crops of scikit-image's bundled photographs."""
    from skimage import data as skdata

    sources = [skdata.astronaut(), skdata.chelsea(), skdata.coffee()]
    rng = np.random.default_rng(seed)
    crops = []
    for i in range(n):
        src = sources[i % len(sources)]
        y = rng.integers(0, src.shape[0] - size)
        x = rng.integers(0, src.shape[1] - size)
        crops.append(src[y : y + size, x : x + size].transpose(2, 0, 1))
    return np.stack(crops).astype(np.uint8)


def synthetic_handle(n=32, size=32, seed=0, labeled=True, name="synthetic"):
    rng = np.random.default_rng(seed)
    images = (rng.random((n, 3, size, size)) * 255).astype(np.uint8)
    labels = rng.integers(0, 10, n) if labeled else None
    return from_arrays(images, labels, name=name, seed=seed)


@pytest.fixture(scope="session")
def tiny_bundle():
    """Small random-init backbone bundle (1 block per stage) for fast tests."""
    return new_backbone(blocks_per_stage=1, n_cls=10, seed=123)


@pytest.fixture(scope="session")
def small_bundle():
    """Slightly deeper bundle for training-behavior tests."""
    return new_backbone(blocks_per_stage=2, n_cls=10, seed=7)


def _try_real_dataset(name, split):
    try:
        return load_dataset(name, split, seed=0, root=resolve_data_root(None))
    except Exception:
        return None


def real_cifar10(split):
    """The genuine CIFAR-10 under DATA_ROOT, or None (mini fixtures don't count)."""
    handle = _try_real_dataset("cifar10", split)
    expected = {"train": 50000, "test": 10000, "all": 60000}[split]
    if handle is not None and len(handle) == expected:
        return handle
    return None


def real_kodak():
    handle = _try_real_dataset("kodak", "all")
    if handle is not None and len(handle) == 24:
        return handle
    return None


CIFAR_SKIP = "real CIFAR-10 not present under DATA_ROOT (run `semcom fetch-datasets` with network)"
DESK_SKIP = "desk-scale run; set SEMCOM_DESK=1 to enable"
FULL_SKIP = "full-scale reproduction (200+100 epochs); set SEMCOM_FULL=1 to enable"


def desk_enabled():
    return os.environ.get("SEMCOM_DESK") == "1"


def full_enabled():
    return os.environ.get("SEMCOM_FULL") == "1"
