"""End-to-end transmission: encode, normalize, AWGN, decode."""

from __future__ import annotations

import torch

from .channel import NoiseModel, awgn_transmit, power_normalize
from .codec import Decoder, Encoder, decode, encode


def transmit_images(
    encoder: Encoder,
    decoder: Decoder,
    x: torch.Tensor,
    noise: NoiseModel,
    power: float = 1.0,
) -> torch.Tensor:
    """Send a batch through the full pipeline and return reconstructions.

    Per-image power normalization, one fresh noise realization per call.
    Differentiable end to end.
    """
    spatial = (x.shape[-2], x.shape[-1])
    s_tilde = encode(encoder, x)
    symbols = power_normalize(s_tilde, power)
    s_hat = awgn_transmit(symbols, noise)
    return decode(decoder, s_hat, spatial)
