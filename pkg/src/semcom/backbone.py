"""Frozen downstream model: CIFAR ResNet backbone plus linear classifier.

The pretrained network is split at the pre-pooling point: the backbone maps
a (B, 3, 32, 32) batch to a (B, 64, 8, 8) feature map, the classifier is
global average pooling, a linear layer, and softmax. Backbone parameters
are frozen (requires_grad False) but gradients still flow through to the
input, which stage-1/2 training relies on. Dataset normalization happens
inside extract_features so callers keep images in [0, 1].
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt_io
from .exceptions import CheckpointError, ShapeError

log = logging.getLogger(__name__)

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


class _BasicBlock(nn.Module):
    """CIFAR-style basic block; downsampling uses the parameter-free
    zero-padded shortcut (option A)."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.stride = stride
        self.pad_ch = out_ch - in_ch

    def _shortcut(self, x):
        if self.stride == 1 and self.pad_ch == 0:
            return x
        x = x[:, :, :: self.stride, :: self.stride]
        return F.pad(x, (0, 0, 0, 0, self.pad_ch // 2, self.pad_ch - self.pad_ch // 2))

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self._shortcut(x))


class CifarResNetBackbone(nn.Module):
    """Stem plus three stages; output is the pre-pooling feature map.

    blocks_per_stage=9 gives ResNet-56 (6*9 + 2 layers counting the stem
    and the classifier's linear layer).
    """

    def __init__(self, blocks_per_stage: int = 9, in_channels: int = 3):
        super().__init__()
        self.blocks_per_stage = blocks_per_stage
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, padding=1, bias=False), nn.BatchNorm2d(16), nn.ReLU()
        )
        self.stage1 = self._stage(16, 16, blocks_per_stage, stride=1)
        self.stage2 = self._stage(16, 32, blocks_per_stage, stride=2)
        self.stage3 = self._stage(32, 64, blocks_per_stage, stride=2)
        self.feature_channels = 64

    @staticmethod
    def _stage(in_ch, out_ch, n_blocks, stride):
        blocks = [_BasicBlock(in_ch, out_ch, stride)]
        blocks += [_BasicBlock(out_ch, out_ch) for _ in range(n_blocks - 1)]
        return nn.Sequential(*blocks)

    def forward(self, x):
        return self.stage3(self.stage2(self.stage1(self.stem(x))))


@dataclass
class BackboneBundle:
    """Frozen backbone, classifier head, and their bookkeeping."""

    backbone: CifarResNetBackbone
    classifier: nn.Linear
    n_cls: int = 10
    input_mean: tuple = CIFAR10_MEAN
    input_std: tuple = CIFAR10_STD
    recorded_accuracy: float | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def feature_channels(self) -> int:
        return self.backbone.feature_channels

    def to(self, dtype: torch.dtype) -> "BackboneBundle":
        self.backbone.to(dtype)
        self.classifier.to(dtype)
        return self


def new_backbone(blocks_per_stage: int = 9, n_cls: int = 10, seed: int | None = None) -> BackboneBundle:
    """Freshly initialized bundle in inference mode with a frozen backbone."""
    if seed is not None:
        torch.manual_seed(seed)
    backbone = CifarResNetBackbone(blocks_per_stage)
    classifier = nn.Linear(backbone.feature_channels, n_cls)
    bundle = BackboneBundle(backbone=backbone, classifier=classifier, n_cls=n_cls)
    _freeze(bundle)
    return bundle


def _freeze(bundle: BackboneBundle) -> None:
    bundle.backbone.eval()
    bundle.classifier.eval()
    for p in bundle.backbone.parameters():
        p.requires_grad_(False)
    for p in bundle.classifier.parameters():
        p.requires_grad_(False)


def extract_features(bundle: BackboneBundle, x: torch.Tensor) -> torch.Tensor:
    """(B, 3, h, w) images in [0, 1] -> (B, C, h/4, w/4) feature maps.

    Dataset mean/std normalization is applied here. No parameters mutate;
    gradients flow through to x.
    """
    if x.dim() != 4 or x.shape[1] != len(bundle.input_mean):
        raise ShapeError(f"expected (B, {len(bundle.input_mean)}, h, w) input, got {tuple(x.shape)}")
    mean = x.new_tensor(bundle.input_mean).view(1, -1, 1, 1)
    std = x.new_tensor(bundle.input_std).view(1, -1, 1, 1)
    return bundle.backbone((x - mean) / std)


def classify(bundle: BackboneBundle, features: torch.Tensor) -> torch.Tensor:
    """Feature maps -> class probability rows (global avg pool, linear, softmax)."""
    if features.dim() != 4 or features.shape[1] != bundle.feature_channels:
        raise ShapeError(
            f"expected (B, {bundle.feature_channels}, h, w) features, got {tuple(features.shape)}"
        )
    pooled = features.mean(dim=(2, 3))
    return F.softmax(bundle.classifier(pooled), dim=1)


def parameter_fingerprint(module: nn.Module) -> str:
    """SHA-256 over all parameter and buffer bytes, in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_backbone(bundle: BackboneBundle, path) -> str:
    """Persist the bundle as a hash-verified checkpoint; returns the content hash."""
    payload = {
        "kind": "backbone_bundle",
        "blocks_per_stage": bundle.backbone.blocks_per_stage,
        "n_cls": bundle.n_cls,
        "backbone_state": bundle.backbone.state_dict(),
        "classifier_state": bundle.classifier.state_dict(),
        "input_mean": tuple(bundle.input_mean),
        "input_std": tuple(bundle.input_std),
        "recorded_accuracy": bundle.recorded_accuracy,
        "provenance": dict(bundle.provenance),
    }
    return ckpt_io.save_checkpoint(payload, path)


def load_backbone(
    checkpoint_path,
    expected_accuracy_floor: float = 0.92,
    dataset=None,
    batch_size: int = 512,
) -> BackboneBundle:
    """Load a pretrained ResNet-56 bundle and verify its provenance.

    The checkpoint must match the ResNet-56 topology split at the
    pre-pooling point. Clean CIFAR-10 test accuracy is measured against
    `dataset` when given (or a cifar10 test handle reachable via DATA_ROOT);
    a result under the floor logs a warning and is recorded, not fatal.
    Without any dataset the accuracy stays unverified and is recorded as such.
    """
    payload = ckpt_io.load_checkpoint(checkpoint_path)
    if payload.get("kind") != "backbone_bundle":
        raise CheckpointError(f"{checkpoint_path} is not a backbone checkpoint")
    if payload.get("blocks_per_stage") != 9:
        raise CheckpointError(
            f"expected ResNet-56 topology (9 blocks per stage), "
            f"checkpoint has {payload.get('blocks_per_stage')}"
        )
    backbone = CifarResNetBackbone(blocks_per_stage=9)
    classifier = nn.Linear(backbone.feature_channels, payload["n_cls"])
    try:
        backbone.load_state_dict(payload["backbone_state"], strict=True)
        classifier.load_state_dict(payload["classifier_state"], strict=True)
    except (RuntimeError, KeyError) as exc:
        raise CheckpointError(f"topology mismatch loading {checkpoint_path}: {exc}") from exc

    bundle = BackboneBundle(
        backbone=backbone,
        classifier=classifier,
        n_cls=payload["n_cls"],
        input_mean=tuple(payload["input_mean"]),
        input_std=tuple(payload["input_std"]),
        provenance=dict(payload.get("provenance", {})),
    )
    _freeze(bundle)

    if dataset is None:
        dataset = _default_accuracy_dataset()
    if dataset is not None:
        acc = measure_clean_accuracy(bundle, dataset, batch_size=batch_size)
        bundle.recorded_accuracy = acc
        bundle.provenance["clean_accuracy"] = acc
        if acc < expected_accuracy_floor:
            log.warning(
                "backbone clean accuracy %.4f below floor %.2f; recorded, not fatal",
                acc, expected_accuracy_floor,
            )
    else:
        bundle.provenance["clean_accuracy"] = "unverified (no dataset available)"
        log.warning("no CIFAR-10 test data reachable; backbone accuracy left unverified")
    return bundle


def _default_accuracy_dataset():
    from .datasets import DataError, load_dataset, resolve_data_root

    try:
        return load_dataset("cifar10", "test", seed=0, root=resolve_data_root(None))
    except DataError:
        return None


def measure_clean_accuracy(bundle: BackboneBundle, dataset, batch_size: int = 512) -> float:
    """Top-1 accuracy of classify(extract_features(x)) over a labeled handle."""
    correct = 0
    total = 0
    with torch.no_grad():
        for x, y in dataset.iter_batches(batch_size, shuffle=False):
            probs = classify(bundle, extract_features(bundle, x))
            correct += int((probs.argmax(dim=1) == y).sum())
            total += len(y)
    return correct / total
