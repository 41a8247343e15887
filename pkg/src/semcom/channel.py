"""Power normalization and the AWGN channel.

Channel symbols are complex tensors: one complex entry is one channel use,
carried as an (in-phase, quadrature) pair of the real-valued network stack.
All noise is drawn from an explicitly seeded generator, so a fixed
(seed, input) pair reproduces the same realization bit for bit.

Generators are not shared across threads; give each worker its own
NoiseModel seeded as base_seed + worker_index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .exceptions import ConfigError, DegenerateInputError, ShapeError


def snr_to_sigma2(snr_db: float, power: float) -> float:
    """Per-complex-symbol noise variance for a given SNR in dB.

    Uses SNR = P / sigma^2, so sigma^2 = P * 10**(-snr_db / 10).
    """
    if power <= 0:
        raise ConfigError(f"power budget must be positive, got {power}")
    return power * 10.0 ** (-snr_db / 10.0)


def pack_complex(flat: torch.Tensor) -> torch.Tensor:
    """Pack consecutive real pairs along the last axis into complex values.

    (..., 2k) real -> (..., k) complex. Inverse of :func:`unpack_complex`.
    """
    if flat.shape[-1] % 2 != 0:
        raise ShapeError(f"cannot pair an odd number of values ({flat.shape[-1]})")
    pairs = flat.reshape(*flat.shape[:-1], -1, 2)
    return torch.view_as_complex(pairs.contiguous())


def unpack_complex(values: torch.Tensor) -> torch.Tensor:
    """(..., k) complex -> (..., 2k) real, consecutive (re, im) pairs."""
    return torch.view_as_real(values).reshape(*values.shape[:-1], -1)


@dataclass
class ChannelSymbols:
    """A power-normalized channel input.

    values holds complex symbols along the trailing axis; leading axes (if
    any) are independent transmissions, each normalized on its own.
    """

    values: torch.Tensor
    power_budget: float

    @property
    def k(self) -> int:
        return self.values.shape[-1]

    def mean_power(self) -> torch.Tensor:
        """(1/k) * sum_i |values_i|^2 per transmission."""
        return self.values.abs().square().mean(dim=-1)


def power_normalize(s_tilde: torch.Tensor, power: float) -> ChannelSymbols:
    """Scale each symbol vector to average power `power` per complex symbol.

    s = sqrt(k * P) * s_tilde / ||s_tilde||, applied along the trailing axis
    (per image, never across a batch). Direction is preserved and the result
    is scale-invariant in s_tilde.
    """
    if power <= 0:
        raise ConfigError(f"power budget must be positive, got {power}")
    if not s_tilde.is_complex():
        raise ShapeError("power_normalize expects a complex tensor; pack_complex first")
    k = s_tilde.shape[-1]
    if k < 1:
        raise ShapeError("need at least one channel symbol")
    norm = torch.linalg.vector_norm(s_tilde, dim=-1, keepdim=True)
    if not bool(torch.isfinite(norm).all()):
        raise DegenerateInputError("non-finite values in channel input cannot be power normalized")
    if not bool((norm > 0).all()):
        raise DegenerateInputError("zero-norm input cannot be power normalized")
    scale = math.sqrt(k * power) / norm
    return ChannelSymbols(values=s_tilde * scale, power_budget=power)


@dataclass
class NoiseModel:
    """IID circularly-symmetric complex Gaussian noise CN(0, sigma2 * I).

    Real and imaginary parts are each N(0, sigma2 / 2). The internal
    generator is seeded once at construction and consumed across calls,
    giving a fresh realization per forward pass; rebuild with the same seed
    (or restore its state) to replay a stream.
    """

    snr_db: float | None
    sigma2: float
    seed: int
    _generator: torch.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError(f"noise variance must be >= 0, got {self.sigma2}")

    @classmethod
    def from_snr(cls, snr_db: float, power: float, seed: int) -> "NoiseModel":
        return cls(snr_db=snr_db, sigma2=snr_to_sigma2(snr_db, power), seed=seed)

    @property
    def generator(self) -> torch.Generator:
        if self._generator is None:
            self._generator = torch.Generator()
            self._generator.manual_seed(int(self.seed))
        return self._generator

    def get_state(self) -> torch.Tensor:
        return self.generator.get_state()

    def set_state(self, state: torch.Tensor) -> None:
        self.generator.set_state(state)

    def sample(self, shape: torch.Size, dtype: torch.dtype) -> torch.Tensor:
        """Draw complex noise of the given shape; dtype is the real dtype."""
        parts = torch.randn(*shape, 2, generator=self.generator, dtype=dtype)
        return torch.view_as_complex(parts * math.sqrt(self.sigma2 / 2.0))


def awgn_transmit(symbols: ChannelSymbols, noise: NoiseModel) -> torch.Tensor:
    """Return s + eps with eps drawn from the seeded noise model.

    The noise is a constant with respect to autograd, so gradients pass
    through unchanged. sigma2 == 0 returns the input symbols untouched.
    """
    values = symbols.values
    if noise.sigma2 == 0:
        return values
    eps = noise.sample(values.shape, dtype=values.real.dtype)
    return values + eps
