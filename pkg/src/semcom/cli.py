"""Command-line entry points.

Commands: train, evaluate, sweep, reconstruct, fetch-datasets. Exit codes
are stable: 0 ok, 2 config or input problem, 3 missing prerequisite
(stage-1 / backbone checkpoint), 4 checkpoint incompatibility or corruption.
CLI flags override config keys and the merged, fully resolved config is
written next to the outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .exceptions import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateInputError,
    IncompatibleCheckpointError,
    MissingPrerequisiteError,
    SemcomError,
    ShapeError,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_PREREQUISITE = 3
EXIT_INCOMPATIBLE = 4


def _load_experiment(args):
    from . import config as config_mod

    cfg = config_mod.load_config(args.config)
    if getattr(args, "set", None):
        cfg = config_mod.apply_overrides(cfg, args.set)
    return cfg


def _load_bundle(cfg, required: bool):
    from .backbone import load_backbone

    path = cfg.backbone.checkpoint
    if path is None:
        if required:
            raise ConfigError("this method/stage needs backbone.checkpoint in the config")
        return None
    if not os.path.exists(path):
        raise MissingPrerequisiteError(f"backbone checkpoint not found: {path}")
    return load_backbone(path, cfg.backbone.accuracy_floor)


def _load_train_dataset(cfg):
    from .datasets import load_dataset

    dataset = load_dataset(cfg.dataset.name, "train", seed=cfg.dataset.seed, root=cfg.dataset.root)
    if cfg.dataset.train_subset is not None:
        dataset = dataset.subset(cfg.dataset.train_subset)
    return dataset


def cmd_train(args) -> None:
    from . import config as config_mod
    from .training import run_recipe

    cfg = _load_experiment(args)
    stages = args.stage
    if stages == "2":
        stage1_path = os.path.join(cfg.output_dir, "stage1.ckpt")
        if not os.path.exists(stage1_path):
            raise MissingPrerequisiteError(
                f"--stage 2 requires a stage-1 checkpoint at {stage1_path}"
            )
    config_mod.write_resolved(cfg, cfg.output_dir)
    method = cfg.recipe.method
    bundle_required = (
        method in ("proposed", "deepsc_style") and stages in ("all", "1")
    ) or (method != "deepjscc" and stages in ("all", "2"))
    bundle = _load_bundle(cfg, required=bundle_required)
    dataset = _load_train_dataset(cfg)
    artifacts = run_recipe(cfg.recipe, cfg, dataset=dataset, bundle=bundle,
                           out_dir=cfg.output_dir, stages=stages)
    for stage_name in ("stage1", "stage2"):
        if stage_name in artifacts and artifacts[stage_name]["checkpoint"]:
            print(f"{stage_name}: {artifacts[stage_name]['checkpoint']} "
                  f"(sha256 {artifacts[stage_name]['hash'][:12]}...)")


def _check_codec_compat(cfg, payload) -> None:
    stored = payload.get("codec_config", {})
    wanted = {
        "target_ratio": str(cfg.codec.target_ratio),
        "base_width": cfg.codec.base_width,
        "image_channels": cfg.codec.image_channels,
    }
    if stored != wanted:
        raise IncompatibleCheckpointError(
            f"checkpoint codec {stored} does not match configured codec {wanted}"
        )


def cmd_evaluate(args) -> None:
    from . import checkpoint as ckpt_io
    from .codec import codec_from_payload
    from .datasets import load_dataset
    from .evaluation import CSV_COLUMNS, _bundle_with_classifier, evaluate_system

    cfg = _load_experiment(args)
    payload = ckpt_io.load_checkpoint(args.checkpoint)
    if payload.get("kind") != "codec_train":
        raise IncompatibleCheckpointError(f"{args.checkpoint} is not a codec training checkpoint")
    _check_codec_compat(cfg, payload)
    encoder, decoder = codec_from_payload(payload)

    split = "all" if cfg.dataset.name == "kodak" else "test"
    dataset = load_dataset(cfg.dataset.name, split, seed=cfg.dataset.seed, root=cfg.dataset.root)
    bundle = _bundle_with_classifier(_load_bundle(cfg, required=False), payload)
    n_seeds = args.seeds if args.seeds is not None else cfg.eval.noise_seeds
    result = evaluate_system(
        encoder, decoder, bundle, dataset,
        snr_db=cfg.channel.snr_db, power=cfg.channel.power,
        n_noise_seeds=n_seeds, base_noise_seed=cfg.eval.base_noise_seed,
        batch_size=cfg.eval.batch_size, max_images=cfg.eval.max_images,
        method=payload.get("method", "unknown"),
        checkpoint_hash=payload["_content_hash"],
    )
    row = result.csv_row()
    os.makedirs(cfg.output_dir, exist_ok=True)
    out_csv = os.path.join(cfg.output_dir, "evaluation.csv")
    with open(out_csv, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        fh.write(",".join(row[c] for c in CSV_COLUMNS) + "\n")
    print(",".join(CSV_COLUMNS))
    print(",".join(row[c] for c in CSV_COLUMNS))
    print(f"written to {out_csv}")


def cmd_sweep(args) -> None:
    from . import config as config_mod
    from .config import load_sweep_config
    from .datasets import load_dataset
    from .evaluation import run_sweep

    cfg, grid = load_sweep_config(args.config)
    config_mod.write_resolved(cfg, cfg.output_dir)
    split = "all" if cfg.dataset.name == "kodak" else "test"
    dataset = load_dataset(cfg.dataset.name, split, seed=cfg.dataset.seed, root=cfg.dataset.root)
    bundle = _load_bundle(cfg, required=False)
    rows = run_sweep(
        grid.methods, grid.snr_dbs, grid.ratios, grid.checkpoint_dir, cfg.output_dir,
        dataset, bundle=bundle, n_noise_seeds=cfg.eval.noise_seeds,
        base_noise_seed=cfg.eval.base_noise_seed, power=cfg.channel.power,
        batch_size=cfg.eval.batch_size, max_images=cfg.eval.max_images,
    )
    print(f"{len(rows)} rows in {os.path.join(cfg.output_dir, 'results.csv')}")


def cmd_reconstruct(args) -> None:
    import numpy as np
    import torch
    from PIL import Image

    from . import checkpoint as ckpt_io
    from .channel import NoiseModel
    from .codec import codec_from_payload
    from .evaluation import ms_ssim, psnr
    from .pipeline import transmit_images

    payload = ckpt_io.load_checkpoint(args.checkpoint)
    if payload.get("kind") != "codec_train":
        raise IncompatibleCheckpointError(f"{args.checkpoint} is not a codec training checkpoint")
    encoder, decoder = codec_from_payload(payload)

    if not os.path.exists(args.image):
        raise ConfigError(f"input image not found: {args.image}")
    with Image.open(args.image) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    x = torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise ShapeError(
            f"image dims ({h}, {w}) must be divisible by 4; "
            f"pad to ({-(-h // 4) * 4}, {-(-w // 4) * 4}) first"
        )

    noise = NoiseModel.from_snr(args.snr, args.power, args.noise_seed)
    with torch.no_grad():
        x_hat = transmit_images(encoder, decoder, x, noise, args.power)

    out_path = args.out or (os.path.splitext(args.image)[0] + ".reconstructed.png")
    arr_hat = (x_hat[0].clamp(0, 1).numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr_hat).save(out_path)

    metrics = {
        "input": args.image,
        "snr_db": args.snr,
        "power": args.power,
        "noise_seed": args.noise_seed,
        "target_ratio": payload["codec_config"]["target_ratio"],
        "psnr_db": psnr(x[0], x_hat[0]),
        "ms_ssim": float(ms_ssim(x[0], x_hat[0])),
        "checkpoint_sha256": payload["_content_hash"],
    }
    sidecar = out_path + ".metrics.json"
    with open(sidecar, "w") as fh:
        json.dump(metrics, fh, indent=2)

    if args.panel:
        panel = np.concatenate(
            [(arr * 255.0).round().astype(np.uint8), arr_hat], axis=1
        )
        panel_path = os.path.splitext(out_path)[0] + ".panel.png"
        Image.fromarray(panel).save(panel_path)
        print(f"panel: {panel_path}")
    print(f"reconstruction: {out_path}")
    print(f"metrics: {sidecar} (psnr {metrics['psnr_db']:.2f} dB, ms-ssim {metrics['ms_ssim']:.4f})")


def cmd_fetch(args) -> None:
    from .fetch import fetch_datasets

    try:
        fetch_datasets(root=args.root, names=tuple(args.datasets))
    except OSError as exc:
        raise DataError(f"download failed (network required): {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcom",
        description="Contrastive semantic communication: train, evaluate, sweep, reconstruct.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the two-stage training (or one stage)")
    p_train.add_argument("config", help="experiment config YAML")
    p_train.add_argument("--stage", choices=["1", "2", "all"], default="all")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key, e.g. --set channel.snr_db=5")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a trained checkpoint")
    p_eval.add_argument("config", help="experiment config YAML")
    p_eval.add_argument("checkpoint", help="stage-1/2 checkpoint to evaluate")
    p_eval.add_argument("--seeds", type=int, default=None,
                        help="number of noise realizations to average over")
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="evaluate a methods x SNRs x ratios grid")
    p_sweep.add_argument("config", help="sweep config YAML (experiment config + sweep section)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rec = sub.add_parser("reconstruct", help="send one image through a trained system")
    p_rec.add_argument("checkpoint")
    p_rec.add_argument("image")
    p_rec.add_argument("--snr", type=float, default=20.0)
    p_rec.add_argument("--power", type=float, default=1.0)
    p_rec.add_argument("--noise-seed", type=int, default=0)
    p_rec.add_argument("--out", default=None)
    p_rec.add_argument("--panel", action="store_true", help="also write an original|reconstruction panel")
    p_rec.set_defaults(func=cmd_reconstruct)

    p_fetch = sub.add_parser("fetch-datasets", help="download datasets (network required)")
    p_fetch.add_argument("--root", default=None, help="data root (default: $DATA_ROOT or ./data)")
    p_fetch.add_argument("--datasets", nargs="+", default=["cifar10", "stl10", "kodak"],
                         choices=["cifar10", "stl10", "kodak"])
    p_fetch.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except MissingPrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_PREREQUISITE
    except (IncompatibleCheckpointError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (ConfigError, ShapeError, DegenerateInputError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SemcomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
