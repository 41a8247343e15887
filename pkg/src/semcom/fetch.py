"""Dataset download helper for `semcom fetch-datasets`.

Kept apart from the loaders on purpose: the library itself never touches
the network. Downloads the standard public distributions into the data
root so the loaders' expected layout exists.
"""

from __future__ import annotations

import hashlib
import os
import tarfile
import urllib.request

from .datasets import CIFAR10_DIR, KODAK_DIR, STL10_DIR, resolve_data_root

CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
STL10_URL = "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz"
KODAK_URL = "https://r0k.us/graphics/kodak/kodak/kodim{:02d}.png"


def _download(url: str, dest: str) -> None:
    print(f"downloading {url} -> {dest}")
    tmp = dest + ".part"
    with urllib.request.urlopen(url) as resp, open(tmp, "wb") as out:
        while True:
            chunk = resp.read(1 << 20)
            if not chunk:
                break
            out.write(chunk)
    os.replace(tmp, dest)


def _extract(tar_path: str, root: str) -> None:
    with tarfile.open(tar_path) as tar:
        try:
            tar.extractall(root, filter="data")
        except TypeError:  # pre-3.10.12 tarfile without the filter argument
            tar.extractall(root)


def _record_manifest(root: str, paths: list[str]) -> None:
    manifest = os.path.join(root, "manifest.sha256")
    with open(manifest, "a") as fh:
        for p in paths:
            h = hashlib.sha256()
            with open(p, "rb") as f:
                for chunk in iter(lambda: f.read(1 << 20), b""):
                    h.update(chunk)
            fh.write(f"{h.hexdigest()}  {os.path.relpath(p, root)}\n")


def fetch_datasets(root=None, names=("cifar10", "stl10", "kodak")) -> None:
    root = resolve_data_root(root)
    os.makedirs(root, exist_ok=True)
    if "cifar10" in names and not os.path.isdir(os.path.join(root, CIFAR10_DIR)):
        tar_path = os.path.join(root, "cifar-10-python.tar.gz")
        _download(CIFAR10_URL, tar_path)
        _extract(tar_path, root)
        _record_manifest(root, [tar_path])
    if "stl10" in names and not os.path.isdir(os.path.join(root, STL10_DIR)):
        tar_path = os.path.join(root, "stl10_binary.tar.gz")
        _download(STL10_URL, tar_path)
        _extract(tar_path, root)
        _record_manifest(root, [tar_path])
    if "kodak" in names:
        kodak_dir = os.path.join(root, KODAK_DIR)
        os.makedirs(kodak_dir, exist_ok=True)
        fetched = []
        for i in range(1, 25):
            dest = os.path.join(kodak_dir, f"kodim{i:02d}.png")
            if not os.path.exists(dest):
                _download(KODAK_URL.format(i), dest)
                fetched.append(dest)
        if fetched:
            _record_manifest(root, fetched)
    print(f"datasets ready under {root}")
