"""Contrastive semantic communication for wireless image transmission.

A learned joint source-channel codec with a power-constrained complex AWGN
channel, semantic contrastive coding against a frozen backbone, the
two-stage training procedure, baseline recipes, and an evaluation harness.
"""

from .backbone import (
    BackboneBundle,
    classify,
    extract_features,
    load_backbone,
    new_backbone,
    parameter_fingerprint,
    save_backbone,
)
from .channel import (
    ChannelSymbols,
    NoiseModel,
    awgn_transmit,
    pack_complex,
    power_normalize,
    snr_to_sigma2,
    unpack_complex,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import CodecConfig, Decoder, Encoder, build_codec, codec_from_payload, decode, encode
from .datasets import DatasetHandle, from_arrays, load_dataset, resolve_data_root
from .evaluation import (
    SweepResult,
    accuracy,
    cell_dirname,
    evaluate_system,
    ms_ssim,
    psnr,
    run_sweep,
)
from .losses import (
    LossConfig,
    ProjectionHead,
    reconstruction_loss,
    semantic_contrastive_loss,
    stage1_loss,
    stage2_loss,
    task_loss,
)
from .pipeline import transmit_images
from .training import TrainRecipe, lr_at, run_recipe, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "BackboneBundle", "ChannelSymbols", "CodecConfig", "DatasetHandle", "Decoder",
    "Encoder", "LossConfig", "NoiseModel", "ProjectionHead", "SweepResult", "TrainRecipe",
    "accuracy", "awgn_transmit", "build_codec", "cell_dirname", "classify",
    "codec_from_payload", "decode",
    "encode", "evaluate_system", "extract_features", "from_arrays", "load_backbone",
    "load_checkpoint", "load_dataset", "lr_at", "ms_ssim", "new_backbone", "pack_complex",
    "parameter_fingerprint", "power_normalize", "psnr", "reconstruction_loss",
    "resolve_data_root", "run_recipe", "run_sweep", "save_backbone", "save_checkpoint",
    "semantic_contrastive_loss", "snr_to_sigma2", "stage1_loss", "stage2_loss", "task_loss",
    "train_stage1", "train_stage2", "transmit_images", "unpack_complex",
]
