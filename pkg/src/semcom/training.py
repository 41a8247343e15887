"""Two-stage training and the baseline recipes.

Stage 1 pretrains encoder, decoder, and projection head with the combined
reconstruction + semantic contrastive loss; stage 2 fine-tunes encoder,
decoder, and classifier with the reconstruction + task loss at a small
learning rate. The backbone is frozen throughout (gradients still flow
through it). Baselines reuse the same loops: deepjscc is stage 1 with
alpha1 = 1 (pure MSE), deepjscc_ft adds the stage-2 fine-tune, deepsc_style
pretrains with an equal loss split and then retrains only the classifier.

A single training loop owns all mutable state. Every source of randomness
(shuffling, channel noise, parameter init) is seeded, and checkpoints carry
optimizer and generator state, so a resumed run replays the uninterrupted
trajectory bit for bit on fixed hardware.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from . import checkpoint as ckpt_io
from .backbone import BackboneBundle, classify, extract_features
from .channel import NoiseModel
from .codec import Decoder, Encoder, build_codec
from .exceptions import ConfigError, DataError, DegenerateInputError, TrainingDivergedError
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

log = logging.getLogger(__name__)

METHODS = ("proposed", "deepjscc", "deepjscc_ft", "deepsc_style")
DIVERGENCE_LIMIT = 1e3


@dataclass
class TrainRecipe:
    """Hyperparameters of the two-stage procedure."""

    method: str = "proposed"
    stage1_epochs: int = 200
    stage2_epochs: int = 100
    batch_size: int = 128
    stage1_lr: float = 0.01
    stage2_lr: float = 0.0001
    lr_decay_every: int = 50
    lr_decay_factor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.stage1_epochs <= 0 or self.stage2_epochs <= 0:
            raise ConfigError("epoch counts must be positive")
        if self.stage1_lr <= 0 or self.stage2_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 < self.lr_decay_factor < 1:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1), got {self.lr_decay_factor}")
        if self.lr_decay_every <= 0 or self.batch_size <= 0:
            raise ConfigError("lr_decay_every and batch_size must be positive")


def lr_at(base_lr: float, epoch: int, every: int, factor: float) -> float:
    """lr(epoch) = base * factor ** floor(epoch / every)."""
    return base_lr * factor ** (epoch // every)


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _diverged(dump, detail: str) -> TrainingDivergedError:
    path = dump()
    suffix = f"; state dumped to {path}" if path else " (no out_dir, state not dumped)"
    return TrainingDivergedError(detail + suffix)


def _guard(loss: torch.Tensor, dump) -> None:
    value = float(loss.detach())
    if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise _diverged(dump, f"loss diverged to {value}")


class _EpochLog:
    """Weighted running means for one epoch."""

    def __init__(self, keys):
        self.keys = keys
        self.sums = {k: 0.0 for k in keys}
        self.count = 0

    def add(self, n: int, **values):
        for k, v in values.items():
            self.sums[k] += float(v.detach() if isinstance(v, torch.Tensor) else v) * n
        self.count += n

    def means(self) -> dict:
        return {k: self.sums[k] / max(self.count, 1) for k in self.keys}


def _append_jsonl(out_dir, name: str, record: dict) -> None:
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "a") as fh:
        fh.write(json.dumps(record) + "\n")


def _codec_payload(encoder: Encoder) -> dict:
    cfg = encoder.config
    return {
        "target_ratio": str(cfg.target_ratio),
        "base_width": cfg.base_width,
        "image_channels": cfg.image_channels,
    }


def _save_state(out_dir, name, payload) -> tuple[str | None, str | None]:
    if out_dir is None:
        return None, None
    path = os.path.join(out_dir, name)
    digest = ckpt_io.save_checkpoint(payload, path)
    return path, digest


def train_stage1(
    encoder: Encoder,
    decoder: Decoder,
    projection: ProjectionHead | None,
    bundle: BackboneBundle | None,
    dataset,
    noise: NoiseModel,
    loss_cfg: LossConfig,
    recipe: TrainRecipe,
    out_dir=None,
    power: float = 1.0,
    epochs: int | None = None,
    resume_payload: dict | None = None,
    checkpoint_name: str = "stage1.ckpt",
    parent_hash: str | None = None,
) -> dict:
    """Pretrain (encoder, decoder, projection) with L1 = a1*L_rec + (1-a1)*L_sem.

    Anchors come from the originals, positives from their channel-corrupted
    reconstructions; with alpha1 == 1 the semantic path is skipped entirely
    and this reduces to DeepJSCC-style MSE training.
    """
    achieved = encoder.config.achieved_ratio
    alpha1 = loss_cfg.resolve_alpha1(achieved)
    use_sem = alpha1 < 1.0
    if use_sem and (projection is None or bundle is None):
        raise ConfigError("stage 1 with alpha1 < 1 needs a projection head and a backbone bundle")

    params = list(encoder.parameters()) + list(decoder.parameters())
    if use_sem:
        params += list(projection.parameters())
    optimizer = torch.optim.Adam(params, lr=recipe.stage1_lr)

    n_epochs = recipe.stage1_epochs if epochs is None else epochs
    start_epoch = 0
    history: list[dict] = []
    if resume_payload is not None:
        encoder.load_state_dict(resume_payload["encoder_state"])
        decoder.load_state_dict(resume_payload["decoder_state"])
        if use_sem:
            projection.load_state_dict(resume_payload["projection_state"])
        optimizer.load_state_dict(resume_payload["optimizer_state"])
        noise.set_state(resume_payload["noise_gen_state"])
        start_epoch = resume_payload["epoch"]
        history = list(resume_payload["history"])

    encoder.train()
    decoder.train()
    if use_sem:
        projection.train()

    def snapshot(epoch_next: int) -> dict:
        payload = {
            "kind": "codec_train",
            "stage": 1,
            "method": recipe.method,
            "epoch": epoch_next,
            "codec_config": _codec_payload(encoder),
            "loss_config": dataclasses.asdict(loss_cfg),
            "recipe": dataclasses.asdict(recipe),
            "encoder_state": encoder.state_dict(),
            "decoder_state": decoder.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "noise_gen_state": noise.get_state(),
            "noise": {"snr_db": noise.snr_db, "sigma2": noise.sigma2, "seed": noise.seed},
            "history": list(history),
            "parent_hash": parent_hash,
        }
        if use_sem:
            payload["projection_state"] = projection.state_dict()
        return payload

    path = digest = None
    for epoch in range(start_epoch, n_epochs):
        lr = lr_at(recipe.stage1_lr, epoch, recipe.lr_decay_every, recipe.lr_decay_factor)
        _set_lr(optimizer, lr)
        epoch_log = _EpochLog(["l_rec", "l_sem", "composite"])
        dump = lambda: _save_state(out_dir, "diverged.ckpt", snapshot(epoch))[0]  # noqa: E731
        for x, _ in dataset.iter_batches(recipe.batch_size, shuffle=True, epoch=epoch):
            try:
                x_hat = transmit_images(encoder, decoder, x, noise, power)
                l_rec = reconstruction_loss(x, x_hat)
                if use_sem:
                    with torch.no_grad():
                        f_orig = extract_features(bundle, x)
                    anchors = projection(f_orig)
                    positives = projection(extract_features(bundle, x_hat))
                    l_sem = semantic_contrastive_loss(
                        anchors, positives, loss_cfg.tau, loss_cfg.include_positive_in_denominator
                    )
                else:
                    l_sem = torch.zeros((), dtype=x.dtype)
                loss = stage1_loss(l_rec, l_sem, loss_cfg, achieved)
            except DegenerateInputError as exc:
                raise _diverged(dump, f"forward pass produced non-finite values ({exc})") from exc
            _guard(loss, dump)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_log.add(len(x), l_rec=l_rec, l_sem=l_sem, composite=loss)

        record = {"stage": 1, "epoch": epoch, "lr": lr, **epoch_log.means()}
        history.append(record)
        _append_jsonl(out_dir, "metrics_stage1.jsonl", record)
        log.info("stage1 epoch %d lr %.5g L_rec %.5g L_sem %.5g L1 %.5g",
                 epoch, lr, record["l_rec"], record["l_sem"], record["composite"])
        path, digest = _save_state(out_dir, checkpoint_name, snapshot(epoch + 1))

    return {"history": history, "checkpoint": path, "hash": digest}


def train_stage2(
    encoder: Encoder,
    decoder: Decoder,
    bundle: BackboneBundle,
    dataset,
    noise: NoiseModel,
    loss_cfg: LossConfig,
    recipe: TrainRecipe,
    out_dir=None,
    power: float = 1.0,
    epochs: int | None = None,
    classifier_only: bool = False,
    resume_payload: dict | None = None,
    checkpoint_name: str = "stage2.ckpt",
    parent_hash: str | None = None,
) -> dict:
    """Fine-tune with L2 = a2*L_rec + (1-a2)*L_Task.

    Updates encoder, decoder, and classifier; the backbone never moves.
    classifier_only freezes the codec too (deepsc_style baseline).
    """
    if dataset.labels is None:
        raise DataError("stage 2 needs a labeled dataset")

    classifier_params = list(bundle.classifier.parameters())
    for p in classifier_params:
        p.requires_grad_(True)
    params = list(classifier_params)
    if not classifier_only:
        params += list(encoder.parameters()) + list(decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=recipe.stage2_lr)

    n_epochs = recipe.stage2_epochs if epochs is None else epochs
    start_epoch = 0
    history: list[dict] = []
    if resume_payload is not None:
        encoder.load_state_dict(resume_payload["encoder_state"])
        decoder.load_state_dict(resume_payload["decoder_state"])
        bundle.classifier.load_state_dict(resume_payload["classifier_state"])
        optimizer.load_state_dict(resume_payload["optimizer_state"])
        noise.set_state(resume_payload["noise_gen_state"])
        start_epoch = resume_payload["epoch"]
        history = list(resume_payload["history"])

    # frozen codec must not accumulate batch-norm statistics either
    encoder.train(not classifier_only)
    decoder.train(not classifier_only)

    def snapshot(epoch_next: int) -> dict:
        return {
            "kind": "codec_train",
            "stage": 2,
            "method": recipe.method,
            "epoch": epoch_next,
            "codec_config": _codec_payload(encoder),
            "loss_config": dataclasses.asdict(loss_cfg),
            "recipe": dataclasses.asdict(recipe),
            "encoder_state": encoder.state_dict(),
            "decoder_state": decoder.state_dict(),
            "classifier_state": bundle.classifier.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "noise_gen_state": noise.get_state(),
            "noise": {"snr_db": noise.snr_db, "sigma2": noise.sigma2, "seed": noise.seed},
            "history": list(history),
            "parent_hash": parent_hash,
        }

    path = digest = None
    try:
        for epoch in range(start_epoch, n_epochs):
            lr = lr_at(recipe.stage2_lr, epoch, recipe.lr_decay_every, recipe.lr_decay_factor)
            _set_lr(optimizer, lr)
            epoch_log = _EpochLog(["l_rec", "l_task", "composite"])
            dump = lambda: _save_state(out_dir, "diverged.ckpt", snapshot(epoch))[0]  # noqa: E731
            for x, y in dataset.iter_batches(recipe.batch_size, shuffle=True, epoch=epoch):
                try:
                    x_hat = transmit_images(encoder, decoder, x, noise, power)
                    l_rec = reconstruction_loss(x, x_hat)
                    probs = classify(bundle, extract_features(bundle, x_hat))
                    y_onehot = F.one_hot(y, num_classes=bundle.n_cls).to(probs.dtype)
                    l_task = task_loss(y_onehot, probs)
                    loss = stage2_loss(l_rec, l_task, loss_cfg)
                except DegenerateInputError as exc:
                    raise _diverged(dump, f"forward pass produced non-finite values ({exc})") from exc
                _guard(loss, dump)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_log.add(len(x), l_rec=l_rec, l_task=l_task, composite=loss)

            record = {"stage": 2, "epoch": epoch, "lr": lr, **epoch_log.means()}
            history.append(record)
            _append_jsonl(out_dir, "metrics_stage2.jsonl", record)
            log.info("stage2 epoch %d lr %.5g L_rec %.5g L_task %.5g L2 %.5g",
                     epoch, lr, record["l_rec"], record["l_task"], record["composite"])
            path, digest = _save_state(out_dir, checkpoint_name, snapshot(epoch + 1))
    finally:
        for p in classifier_params:
            p.requires_grad_(False)

    return {"history": history, "checkpoint": path, "hash": digest}


def _stage1_loss_config(method: str, loss_cfg: LossConfig) -> LossConfig:
    if method in ("deepjscc", "deepjscc_ft"):
        return dataclasses.replace(loss_cfg, alpha1=1.0, alpha1_policy="fixed")
    if method == "deepsc_style":
        return dataclasses.replace(loss_cfg, alpha1=0.5, alpha1_policy="fixed")
    return loss_cfg


def run_recipe(
    recipe: TrainRecipe,
    experiment,
    dataset=None,
    bundle: BackboneBundle | None = None,
    out_dir=None,
    stages: str = "all",
) -> dict:
    """Run one method's recipe (or a single stage of it) from an experiment config.

    proposed      stage 1 (contrastive + MSE), then stage 2.
    deepjscc      stage 1 with alpha1 = 1 only.
    deepjscc_ft   deepjscc stage 1, then the proposed stage 2.
    deepsc_style  stage 1 with alpha1 = 0.5, then classifier-only stage 2.

    stages is "all", "1", or "2"; stage 2 alone resumes the codec from
    out_dir/stage1.ckpt. Returns checkpoint paths/hashes and per-stage
    histories; stage-2 checkpoints record the stage-1 hash as their parent.
    """
    from . import checkpoint as ckpt_io
    from .codec import codec_from_payload
    from .datasets import load_dataset
    from .exceptions import MissingPrerequisiteError

    if stages not in ("all", "1", "2"):
        raise ConfigError(f"stages must be 'all', '1', or '2', got {stages!r}")
    out_dir = out_dir if out_dir is not None else experiment.output_dir
    if dataset is None:
        dataset = load_dataset(
            experiment.dataset.name, "train",
            seed=experiment.dataset.seed, root=experiment.dataset.root,
        )
        if experiment.dataset.train_subset is not None:
            dataset = dataset.subset(experiment.dataset.train_subset)

    needs_bundle_stage1 = recipe.method in ("proposed", "deepsc_style") and stages in ("all", "1")
    needs_stage2 = recipe.method != "deepjscc" and stages in ("all", "2")
    if stages == "2" and recipe.method == "deepjscc":
        raise ConfigError("the deepjscc recipe has no stage 2")
    if (needs_bundle_stage1 or needs_stage2) and bundle is None:
        raise ConfigError(f"method {recipe.method!r} needs a backbone bundle")

    power = experiment.channel.power
    artifacts = {"method": recipe.method}
    parent_hash = None

    if stages in ("all", "1"):
        torch.manual_seed(recipe.seed)
        encoder, decoder = build_codec(experiment.codec)
        projection = None
        if needs_bundle_stage1:
            projection = ProjectionHead(
                bundle.feature_channels,
                experiment.loss.projection_hidden_dim,
                experiment.loss.projection_out_dim,
            )
        stage1_noise = NoiseModel.from_snr(
            experiment.channel.snr_db, power, experiment.channel.noise_seed
        )
        stage1 = train_stage1(
            encoder, decoder, projection, bundle if needs_bundle_stage1 else None,
            dataset, stage1_noise, _stage1_loss_config(recipe.method, experiment.loss),
            recipe, out_dir=out_dir, power=power,
        )
        artifacts["stage1"] = stage1
        parent_hash = stage1["hash"]
    else:
        stage1_path = os.path.join(os.fspath(out_dir), "stage1.ckpt")
        if not os.path.exists(stage1_path):
            raise MissingPrerequisiteError(
                f"stage 2 requires a stage-1 checkpoint at {stage1_path}"
            )
        payload = ckpt_io.load_checkpoint(stage1_path)
        encoder, decoder = codec_from_payload(payload)
        parent_hash = payload["_content_hash"]

    if needs_stage2:
        stage2_noise = NoiseModel.from_snr(
            experiment.channel.snr_db, power, experiment.channel.noise_seed + 1
        )
        stage2 = train_stage2(
            encoder, decoder, bundle, dataset, stage2_noise, experiment.loss,
            recipe, out_dir=out_dir, power=power,
            classifier_only=(recipe.method == "deepsc_style"),
            parent_hash=parent_hash,
        )
        artifacts["stage2"] = stage2
    return artifacts
