"""Semantic encoder and decoder.

Both are fully convolutional, so one set of weights serves 32x32 CIFAR
images and 768x512 Kodak images alike. The encoder is a 5x5 head
convolution, two down-sampling modules (residual block + 4x4 stride-2
convolution), and a channel-coding convolution emitting c_out real feature
channels at quarter resolution; the decoder mirrors it with PixelShuffle
up-sampling and a sigmoid re-coding convolution. Every convolution is
followed by batch norm and PReLU except the channel-coding output and the
final sigmoid one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import torch
import torch.nn as nn

from .channel import pack_complex, unpack_complex
from .exceptions import ConfigError, ShapeError

log = logging.getLogger(__name__)


def as_ratio(value) -> Fraction:
    """Coerce '1/48', 0.4, or Fraction into an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    raise ConfigError(f"cannot interpret {value!r} as a ratio")


@dataclass
class CodecConfig:
    """Architecture knobs plus the bandwidth-ratio bookkeeping.

    After two stride-2 stages the feature map is (h/4, w/4); packing c_out
    real channels into complex pairs gives k = (h/4)(w/4) * c_out / 2 and so
    k/n = c_out / (2 * 16 * c). c_out is the nearest even integer realizing
    the target ratio, clamped to 2 from below.
    """

    target_ratio: Fraction = Fraction(1, 6)
    base_width: int = 32
    image_channels: int = 3
    activation: str = "prelu"
    normalization: str = "batch"

    def __post_init__(self):
        self.target_ratio = as_ratio(self.target_ratio)
        if not 0 < self.target_ratio <= 1:
            raise ConfigError(f"target_ratio must lie in (0, 1], got {self.target_ratio}")
        if self.base_width < 1 or self.image_channels < 1:
            raise ConfigError("base_width and image_channels must be positive")
        if self.activation not in ("prelu",):
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.normalization not in ("batch",):
            raise ConfigError(f"unsupported normalization {self.normalization!r}")

    @property
    def latent_channels(self) -> int:
        raw = 2 * self.target_ratio * 16 * self.image_channels
        return max(2, 2 * round(raw / 2))

    @property
    def clamped(self) -> bool:
        raw = 2 * self.target_ratio * 16 * self.image_channels
        return 2 * round(raw / 2) < 2

    @property
    def achieved_ratio(self) -> Fraction:
        return Fraction(self.latent_channels, 2 * 16 * self.image_channels)

    def symbols_for(self, height: int, width: int) -> int:
        """k for an image of the given spatial size."""
        if height % 4 or width % 4:
            raise ShapeError(
                f"spatial dims ({height}, {width}) must be divisible by 4; "
                f"pad to ({-(-height // 4) * 4}, {-(-width // 4) * 4})"
            )
        return (height // 4) * (width // 4) * self.latent_channels // 2


class ResidualBlock(nn.Module):
    """ResNet basic block: two 3x3 convolutions with an identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.act1 = nn.PReLU()
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels)
        self.act2 = nn.PReLU()

    def forward(self, x):
        h = self.act1(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return self.act2(h + x)


def _conv_bn_prelu(in_ch: int, out_ch: int, kernel: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=(kernel - stride) // 2),
        nn.BatchNorm2d(out_ch),
        nn.PReLU(),
    )


class Encoder(nn.Module):
    """Image (B, c, h, w) in [0,1] -> real features (B, c_out, h/4, w/4)."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        w0 = config.base_width
        self.head = _conv_bn_prelu(config.image_channels, w0, 5)
        self.down1 = nn.Sequential(ResidualBlock(w0), _conv_bn_prelu(w0, 2 * w0, 4, stride=2))
        self.down2 = nn.Sequential(ResidualBlock(2 * w0), _conv_bn_prelu(2 * w0, 4 * w0, 4, stride=2))
        self.channel_coding = nn.Conv2d(4 * w0, config.latent_channels, 3, padding=1)

    def forward(self, x):
        return self.channel_coding(self.down2(self.down1(self.head(x))))


class _PixelShuffleUp(nn.Module):
    """3x3 convolution to 4x channels, BN + PReLU, then PixelShuffle(2)."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(_conv_bn_prelu(in_ch, 4 * out_ch, 3), nn.PixelShuffle(2))

    def forward(self, x):
        return self.block(x)


class Decoder(nn.Module):
    """Real features (B, c_out, h/4, w/4) -> image (B, c, h, w) in [0,1]."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        w0 = config.base_width
        self.head = _conv_bn_prelu(config.latent_channels, 4 * w0, 5)
        self.up1 = nn.Sequential(ResidualBlock(4 * w0), _PixelShuffleUp(4 * w0, 2 * w0))
        self.up2 = nn.Sequential(ResidualBlock(2 * w0), _PixelShuffleUp(2 * w0, w0))
        self.recoding = nn.Sequential(nn.Conv2d(w0, config.image_channels, 3, padding=1), nn.Sigmoid())

    def forward(self, z):
        return self.recoding(self.up2(self.up1(self.head(z))))


def build_codec(config: CodecConfig) -> tuple[Encoder, Decoder]:
    """Freshly initialized encoder/decoder pair for the given config."""
    if config.clamped:
        log.warning(
            "target_ratio %s too small to realize; latent channels clamped to 2 "
            "(achieved ratio %s)", config.target_ratio, config.achieved_ratio,
        )
    elif config.achieved_ratio != config.target_ratio:
        log.info(
            "target_ratio %s not exactly realizable; using %d latent channels "
            "(achieved ratio %s)", config.target_ratio, config.latent_channels, config.achieved_ratio,
        )
    return Encoder(config), Decoder(config)


def codec_from_payload(payload: dict) -> tuple[Encoder, Decoder]:
    """Rebuild a trained (encoder, decoder) pair from a checkpoint payload."""
    raw = payload["codec_config"]
    cfg = CodecConfig(
        target_ratio=raw["target_ratio"],
        base_width=raw["base_width"],
        image_channels=raw["image_channels"],
    )
    encoder, decoder = build_codec(cfg)
    encoder.load_state_dict(payload["encoder_state"])
    decoder.load_state_dict(payload["decoder_state"])
    encoder.eval()
    decoder.eval()
    return encoder, decoder


def _check_spatial(x: torch.Tensor) -> None:
    h, w = x.shape[-2], x.shape[-1]
    if h % 4 or w % 4:
        raise ShapeError(
            f"spatial dims ({h}, {w}) must be divisible by 4; "
            f"pad to ({-(-h // 4) * 4}, {-(-w // 4) * 4})"
        )


def encode(encoder: Encoder, x: torch.Tensor) -> torch.Tensor:
    """Run the encoder and pack its real output into complex channel symbols.

    (B, c, h, w) -> complex (B, k) with k = (h/4)(w/4) * c_out / 2; a single
    (c, h, w) image yields a flat (k,) vector.
    """
    single = x.dim() == 3
    if single:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[1] != encoder.config.image_channels:
        raise ShapeError(f"expected (B, {encoder.config.image_channels}, h, w) input, got {tuple(x.shape)}")
    _check_spatial(x)
    feats = encoder(x)
    s_tilde = pack_complex(feats.reshape(feats.shape[0], -1))
    return s_tilde[0] if single else s_tilde


def decode(decoder: Decoder, s_hat: torch.Tensor, spatial_dims: tuple[int, int]) -> torch.Tensor:
    """Unpack received symbols and run the decoder back to image space.

    spatial_dims is the (h, w) of the original image; k must match
    (h/4)(w/4) * c_out / 2 for the decoder's config.
    """
    single = s_hat.dim() == 1
    if single:
        s_hat = s_hat.unsqueeze(0)
    h, w = spatial_dims
    cfg = decoder.config
    expected_k = cfg.symbols_for(h, w)
    if s_hat.shape[-1] != expected_k:
        raise ShapeError(
            f"got k={s_hat.shape[-1]} symbols but spatial dims ({h}, {w}) with "
            f"{cfg.latent_channels} latent channels require k={expected_k}"
        )
    feats = unpack_complex(s_hat).reshape(s_hat.shape[0], cfg.latent_channels, h // 4, w // 4)
    x_hat = decoder(feats)
    return x_hat[0] if single else x_hat
