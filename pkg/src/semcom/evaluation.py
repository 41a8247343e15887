"""Metrics and the experiment sweep harness.

PSNR, MS-SSIM, and top-1 accuracy, plus evaluate_system (full pipeline over
a test split, averaged over several noise realizations) and run_sweep
(methods x SNRs x ratios grid with CSV and plot emission). Metric functions
are pure and thread-safe.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt_io
from .backbone import BackboneBundle, classify, extract_features
from .channel import NoiseModel
from .codec import CodecConfig, codec_from_payload
from .exceptions import CheckpointError, DegenerateInputError, ShapeError
from .pipeline import transmit_images

log = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

CSV_COLUMNS = [
    "method", "snr_db", "target_ratio", "achieved_ratio",
    "accuracy_mean", "accuracy_std", "psnr_mean", "psnr_std",
    "msssim_mean", "msssim_std", "seeds",
]


def psnr(x: torch.Tensor, x_hat: torch.Tensor, max_val: float = 1.0) -> float:
    """10 * log10(max_val^2 / MSE), capped at 100 dB (zero MSE included)."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    mse = float((x - x_hat).square().mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_val**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-coords.square() / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def _filter_valid(x: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    kernel = window.expand(c, 1, *window.shape)
    return F.conv2d(x, kernel, groups=c)


def _ssim_cs_per_channel(x, y, max_val, window, k1, k2):
    """Per-channel means of the luminance*cs map and the cs map (valid window)."""
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    mu_x = _filter_valid(x, window)
    mu_y = _filter_valid(y, window)
    num0 = 2.0 * mu_x * mu_y
    den0 = mu_x.square() + mu_y.square()
    luminance = (num0 + c1) / (den0 + c1)
    num1 = 2.0 * _filter_valid(x * y, window)
    den1 = _filter_valid(x.square(), window) + _filter_valid(y.square(), window)
    cs = (num1 - num0 + c2) / (den1 - den0 + c2)
    return (luminance * cs).mean(dim=(2, 3)), cs.mean(dim=(2, 3))


def _downsample2(x: torch.Tensor) -> torch.Tensor:
    pad_h, pad_w = x.shape[-2] % 2, x.shape[-1] % 2
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
    return F.avg_pool2d(x, 2)


def n_feasible_scales(height: int, width: int, filter_size: int = 11, max_scales: int = 5) -> int:
    """Largest scale count whose smallest map still fits the filter window.

    Downsampling pads to even then halves, so the map at scale s is
    ceil(min(h, w) / 2**(s-1)); it must be >= filter_size.
    """
    m = min(height, width)
    n = 0
    while n < max_scales and -(-m // 2**n) >= filter_size:
        n += 1
    return n


def ms_ssim(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    max_val: float = 1.0,
    filter_size: int = 11,
    filter_sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    weights=None,
    max_scales: int = 5,
) -> torch.Tensor:
    """Multi-scale structural similarity with the conventional 5-scale weights.

    The scale count drops automatically for small images (weights
    renormalized over the kept prefix); the standard 5-scale variant needs
    min(h, w) >= 161 with the default 11x11 window. Symmetric in its
    arguments; 1 for identical images. Returns a scalar tensor for a single
    (C, H, W) pair or a (B,) tensor for batches.
    """
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    single = x.dim() == 3
    if single:
        x, x_hat = x.unsqueeze(0), x_hat.unsqueeze(0)
    if x.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W) or (C, H, W) images, got {tuple(x.shape)}")

    n_scales = n_feasible_scales(x.shape[-2], x.shape[-1], filter_size, max_scales)
    if n_scales < 1:
        raise ShapeError(
            f"image {tuple(x.shape[-2:])} too small for even one scale with a "
            f"{filter_size}x{filter_size} window"
        )
    if weights is None:
        prefix = MSSSIM_WEIGHTS[:n_scales]
        weights = prefix if n_scales == len(MSSSIM_WEIGHTS) else tuple(w / sum(prefix) for w in prefix)
    elif len(weights) != n_scales:
        raise ShapeError(f"{len(weights)} weights given but {n_scales} scales are feasible")

    window = _gaussian_window(filter_size, filter_sigma, x.dtype, x.device)
    factors = []
    ssim_val = None
    for scale in range(n_scales):
        if scale > 0:
            x, x_hat = _downsample2(x), _downsample2(x_hat)
        ssim_val, cs = _ssim_cs_per_channel(x, x_hat, max_val, window, k1, k2)
        factors.append(cs.clamp_min(0.0))
    factors[-1] = ssim_val.clamp_min(0.0)

    w = torch.as_tensor(weights, dtype=x.dtype, device=x.device)
    combined = torch.stack(factors, dim=-1).pow(w).prod(dim=-1).mean(dim=-1)
    return combined[0] if single else combined


def accuracy(y_pred, y_true) -> float:
    """Top-1 match fraction of predicted vs true labels."""
    y_pred = torch.as_tensor(y_pred)
    y_true = torch.as_tensor(y_true)
    if y_pred.shape != y_true.shape:
        raise ShapeError(f"label shape mismatch: {tuple(y_pred.shape)} vs {tuple(y_true.shape)}")
    if y_pred.numel() == 0:
        raise DegenerateInputError("cannot compute accuracy of an empty label set")
    return float((y_pred == y_true).float().mean())


@dataclass
class SweepResult:
    """One (method, SNR, ratio) cell of the evaluation grid."""

    method: str
    snr_db: float
    target_ratio: Fraction
    achieved_ratio: Fraction
    accuracy_mean: float
    accuracy_std: float
    psnr_mean: float
    psnr_std: float
    msssim_mean: float
    msssim_std: float
    noise_seeds_used: list
    checkpoint_hash: str | None = None

    def csv_row(self) -> dict:
        return {
            "method": self.method,
            "snr_db": f"{self.snr_db:g}",
            "target_ratio": str(self.target_ratio),
            "achieved_ratio": str(self.achieved_ratio),
            "accuracy_mean": f"{self.accuracy_mean:.6f}",
            "accuracy_std": f"{self.accuracy_std:.6f}",
            "psnr_mean": f"{self.psnr_mean:.6f}",
            "psnr_std": f"{self.psnr_std:.6f}",
            "msssim_mean": f"{self.msssim_mean:.6f}",
            "msssim_std": f"{self.msssim_std:.6f}",
            "seeds": str(len(self.noise_seeds_used)),
        }


def evaluate_system(
    encoder,
    decoder,
    bundle: BackboneBundle | None,
    dataset,
    snr_db: float,
    power: float = 1.0,
    n_noise_seeds: int = 10,
    base_noise_seed: int = 0,
    batch_size: int = 256,
    max_images: int | None = None,
    method: str = "proposed",
    checkpoint_hash: str | None = None,
) -> SweepResult:
    """Full-pipeline metrics over a test split, averaged over noise seeds.

    Runs the pipeline once per noise seed (seeds base..base+n-1), collects
    accuracy (when the dataset has labels and a bundle is given), mean PSNR,
    and mean MS-SSIM, and reports mean and standard deviation across seeds.
    Deterministic: identical arguments give an identical result.
    """
    encoder.eval()
    decoder.eval()
    cfg: CodecConfig = encoder.config
    # mixed-orientation sets (kodak) cannot be stacked into one batch
    bs = 1 if len(dataset.image_shapes) > 1 else batch_size

    per_seed = {"accuracy": [], "psnr": [], "msssim": []}
    seeds = [base_noise_seed + i for i in range(n_noise_seeds)]
    with torch.no_grad():
        for seed in seeds:
            noise = NoiseModel.from_snr(snr_db, power, seed)
            psnrs, msssims = [], []
            correct = total = 0
            for x, y in dataset.iter_batches(bs, shuffle=False, limit=max_images):
                x_hat = transmit_images(encoder, decoder, x, noise, power)
                for i in range(len(x)):
                    psnrs.append(psnr(x[i], x_hat[i]))
                msssims.extend(ms_ssim(x, x_hat).tolist())
                if y is not None and bundle is not None:
                    probs = classify(bundle, extract_features(bundle, x_hat))
                    correct += int((probs.argmax(dim=1) == y).sum())
                    total += len(y)
            per_seed["psnr"].append(float(np.mean(psnrs)))
            per_seed["msssim"].append(float(np.mean(msssims)))
            per_seed["accuracy"].append(correct / total if total else float("nan"))

    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    acc_mean, acc_std = stats(per_seed["accuracy"])
    psnr_mean, psnr_std = stats(per_seed["psnr"])
    ms_mean, ms_std = stats(per_seed["msssim"])
    return SweepResult(
        method=method,
        snr_db=snr_db,
        target_ratio=cfg.target_ratio,
        achieved_ratio=cfg.achieved_ratio,
        accuracy_mean=acc_mean,
        accuracy_std=acc_std,
        psnr_mean=psnr_mean,
        psnr_std=psnr_std,
        msssim_mean=ms_mean,
        msssim_std=ms_std,
        noise_seeds_used=seeds,
        checkpoint_hash=checkpoint_hash,
    )


def cell_dirname(method: str, snr_db: float, ratio: Fraction) -> str:
    """Canonical per-cell directory name used to locate trained checkpoints."""
    ratio = Fraction(ratio)
    return f"{method}_snr{snr_db:g}_ratio{ratio.numerator}-{ratio.denominator}"


def load_cell_checkpoint(checkpoint_dir, method, snr_db, ratio):
    """Find a cell's final checkpoint: stage2.ckpt preferred, else stage1.ckpt."""
    cell = os.path.join(os.fspath(checkpoint_dir), cell_dirname(method, snr_db, ratio))
    for name in ("stage2.ckpt", "stage1.ckpt"):
        path = os.path.join(cell, name)
        if os.path.exists(path):
            return ckpt_io.load_checkpoint(path)
    raise CheckpointError(f"no stage1/stage2 checkpoint under {cell}")


def _bundle_with_classifier(bundle: BackboneBundle | None, payload: dict):
    """Copy the bundle with the checkpoint's fine-tuned classifier, if any."""
    if bundle is None or "classifier_state" not in payload:
        return bundle
    import copy

    clf = copy.deepcopy(bundle.classifier)
    clf.load_state_dict(payload["classifier_state"])
    for p in clf.parameters():
        p.requires_grad_(False)
    return BackboneBundle(
        backbone=bundle.backbone,
        classifier=clf,
        n_cls=bundle.n_cls,
        input_mean=bundle.input_mean,
        input_std=bundle.input_std,
        recorded_accuracy=bundle.recorded_accuracy,
        provenance=dict(bundle.provenance),
    )


def _read_existing_rows(csv_path) -> list[dict]:
    if not os.path.exists(csv_path):
        return []
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_sweep(
    methods,
    snr_dbs,
    ratios,
    checkpoint_dir,
    out_dir,
    dataset,
    bundle: BackboneBundle | None = None,
    n_noise_seeds: int = 10,
    base_noise_seed: int = 0,
    power: float = 1.0,
    batch_size: int = 256,
    max_images: int | None = None,
) -> list[dict]:
    """Evaluate every (method, SNR, ratio) cell and emit CSV plus plots.

    Cells whose rows already exist in the output CSV are skipped, so an
    interrupted sweep resumes without recomputation. Cells with no trained
    checkpoint are listed in missing_cells.json and the rest proceed.
    Output: results.csv, accuracy_snr{SNR}.png and psnr_snr{SNR}.png per
    SNR, and missing_cells.json when anything was absent.
    """
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    rows = _read_existing_rows(csv_path)
    done = {(r["method"], r["snr_db"], r["target_ratio"]) for r in rows}
    lineage = {}
    missing = []

    for snr_db in snr_dbs:
        for method in methods:
            for ratio in ratios:
                ratio = Fraction(ratio) if not isinstance(ratio, Fraction) else ratio
                key = (method, f"{snr_db:g}", str(ratio))
                if key in done:
                    continue
                try:
                    payload = load_cell_checkpoint(checkpoint_dir, method, snr_db, ratio)
                except CheckpointError as exc:
                    missing.append({"method": method, "snr_db": snr_db,
                                    "target_ratio": str(ratio), "reason": str(exc)})
                    continue
                encoder, decoder = codec_from_payload(payload)
                result = evaluate_system(
                    encoder, decoder, _bundle_with_classifier(bundle, payload), dataset,
                    snr_db=snr_db, power=power, n_noise_seeds=n_noise_seeds,
                    base_noise_seed=base_noise_seed, batch_size=batch_size,
                    max_images=max_images, method=method,
                    checkpoint_hash=payload["_content_hash"],
                )
                row = result.csv_row()
                rows.append(row)
                lineage[cell_dirname(method, snr_db, ratio)] = payload["_content_hash"]
                _write_csv(csv_path, rows)
                log.info("sweep cell %s done: acc %.4f psnr %.2f", key, result.accuracy_mean,
                         result.psnr_mean)

    manifest_path = os.path.join(out_dir, "missing_cells.json")
    if missing:
        with open(manifest_path, "w") as fh:
            json.dump(missing, fh, indent=2)
    elif os.path.exists(manifest_path):
        os.remove(manifest_path)  # every requested cell is now accounted for
    if lineage:
        with open(os.path.join(out_dir, "lineage.json"), "w") as fh:
            json.dump(lineage, fh, indent=2)
    _emit_plots(rows, out_dir)
    return rows


def _write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _emit_plots(rows, out_dir) -> None:
    """accuracy-vs-ratio and PSNR-vs-ratio, one image file per (metric, SNR)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    snrs = sorted({r["snr_db"] for r in rows})
    for snr in snrs:
        for metric, column in (("accuracy", "accuracy_mean"), ("psnr", "psnr_mean")):
            fig, ax = plt.subplots(figsize=(5, 4))
            for method in sorted({r["method"] for r in rows}):
                pts = [
                    (float(Fraction(r["achieved_ratio"])), float(r[column]))
                    for r in rows
                    if r["method"] == method and r["snr_db"] == snr
                ]
                if not pts:
                    continue
                pts.sort()
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
            ax.set_xlabel("bandwidth compression ratio k/n")
            ax.set_ylabel("test accuracy" if metric == "accuracy" else "PSNR (dB)")
            ax.set_title(f"SNR {snr} dB")
            ax.legend()
            fig.tight_layout()
            fig.savefig(os.path.join(out_dir, f"{metric}_snr{snr}.png"), dpi=120)
            plt.close(fig)
