"""Hash-verified checkpoint files.

A checkpoint is a torch-serialized envelope: a format-version header, the
SHA-256 of the payload bytes, and the payload itself (itself torch-serialized,
so tensors round-trip bit for bit). The hash doubles as the checkpoint's
content identity; lineage is recorded by storing the parent's hash inside
the payload.
"""

from __future__ import annotations

import hashlib
import io
import os

import torch

from .exceptions import CheckpointError, CheckpointIntegrityError

FORMAT_VERSION = 1


def _payload_bytes(payload: dict) -> bytes:
    buf = io.BytesIO()
    torch.save(payload, buf)
    return buf.getvalue()


def content_hash(payload: dict) -> str:
    return hashlib.sha256(_payload_bytes(payload)).hexdigest()


def save_checkpoint(payload: dict, path) -> str:
    """Write payload to path inside a hash-verified envelope; returns the hash."""
    raw = _payload_bytes(payload)
    digest = hashlib.sha256(raw).hexdigest()
    envelope = {"format_version": FORMAT_VERSION, "sha256": digest, "payload": raw}
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    torch.save(envelope, tmp)
    os.replace(tmp, path)
    return digest


def load_checkpoint(path) -> dict:
    """Read, hash-verify, and deserialize a checkpoint payload."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        envelope = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointIntegrityError(f"cannot deserialize checkpoint {path}: {exc}") from exc
    if not isinstance(envelope, dict) or "payload" not in envelope:
        raise CheckpointError(f"{path} is not a checkpoint envelope")
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r} in {path}")
    raw = envelope["payload"]
    digest = hashlib.sha256(raw).hexdigest()
    if digest != envelope.get("sha256"):
        raise CheckpointIntegrityError(f"checkpoint {path} failed its hash check")
    payload = torch.load(io.BytesIO(raw), map_location="cpu", weights_only=False)
    payload["_content_hash"] = digest
    return payload


def checkpoint_hash(path) -> str:
    """Content hash of an on-disk checkpoint (verifies integrity as a side effect)."""
    return load_checkpoint(path)["_content_hash"]
