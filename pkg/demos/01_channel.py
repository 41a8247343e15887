"""Power normalization and the AWGN channel.

Walks through the transmit chain at the symbol level: scale a complex
vector onto the average-power constraint, convert an SNR target into a
noise variance, and check the realized noise statistics empirically.
"""

import torch

from semcom import ChannelSymbols, NoiseModel, awgn_transmit, power_normalize, snr_to_sigma2

# Any complex vector can be scaled to satisfy (1/k) sum |s_i|^2 == P.
s_tilde = torch.tensor([3 + 4j, 1 - 2j, -0.5 + 0.5j, 2j], dtype=torch.complex128)
symbols = power_normalize(s_tilde, power=1.0)
print("channel input:", symbols.values)
print("average power per symbol:", float(symbols.mean_power()), "(budget 1.0)")

# The scaling is per transmission and direction-preserving, so any positive
# rescaling of the encoder output lands on the same channel input.
rescaled = power_normalize(100.0 * s_tilde, power=1.0)
print("scale-invariant:", torch.allclose(rescaled.values, symbols.values))

# SNR in dB determines the per-symbol complex noise variance via P / sigma^2.
for snr_db in (0, 5, 10, 20):
    print(f"SNR {snr_db:>2} dB -> sigma^2 = {snr_to_sigma2(snr_db, 1.0):.5f}")

# Noise draws come from a seeded generator: same seed, same realization.
noise = NoiseModel.from_snr(10.0, power=1.0, seed=7)
received = awgn_transmit(symbols, noise)
again = awgn_transmit(symbols, NoiseModel.from_snr(10.0, power=1.0, seed=7))
print("received:", received)
print("bit-exact replay with the same seed:", torch.equal(received, again))

# Empirically the noise is circularly-symmetric complex Gaussian CN(0, sigma2 I).
k = 200_000
quiet = ChannelSymbols(torch.zeros(k, dtype=torch.complex128), power_budget=1.0)
eps = awgn_transmit(quiet, NoiseModel.from_snr(20.0, 1.0, seed=1))
print(f"empirical var over {k} draws: {float(eps.abs().square().mean()):.6f} "
      f"(sigma^2 = {snr_to_sigma2(20.0, 1.0):.6f})")
print(f"empirical mean: {complex(eps.mean()):.2e}")
