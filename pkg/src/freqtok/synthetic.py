"""Synthetic image batches with controllable frequency content.

Each image is a sum of sinusoidal gratings at chosen integer frequencies
(random phase per channel), a handful of localized high-contrast spots,
and Gaussian pixel noise.  The gratings give a smooth, spectrum-known
background; the spots mimic the sparse high-frequency detail of natural
images (without them, every token deviates equally and frequency-based
token selection has nothing to find).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import SeededRng


@dataclass(frozen=True)
class Grating:
    u: int
    v: int
    amplitude: float = 1.0


DEFAULT_GRATINGS = (
    Grating(0, 1, 0.4),
    Grating(1, 0, 0.4),
    Grating(1, 1, 0.28),
    Grating(2, 3, 0.2),
    Grating(3, 2, 0.2),
    Grating(5, 1, 0.12),
)


@dataclass(frozen=True)
class SyntheticRecipe:
    side: int = 14
    channels: int = 3
    gratings: tuple[Grating, ...] = DEFAULT_GRATINGS
    n_spots: int = 30
    spot_amplitude: float = 30.0
    noise_sigma: float = 0.1

    def __post_init__(self):
        nyquist = self.side // 2
        for g in self.gratings:
            if abs(g.u) > nyquist or abs(g.v) > nyquist:
                raise ValueError(
                    f"grating ({g.u}, {g.v}) beyond Nyquist for side {self.side}"
                )
        if self.n_spots > self.side * self.side:
            raise ValueError("more spots than pixels")
        if self.spot_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("amplitudes must be nonnegative")


def gen_synthetic(recipe: SyntheticRecipe, rng: SeededRng, batch: int = 1) -> np.ndarray:
    """Batch of (side, side, channels) images, deterministic per rng."""
    s, c = recipe.side, recipe.channels
    rr, cc = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    out = np.zeros((batch, s, s, c))
    for i in range(batch):
        gen = rng.split(31, i).generator()
        img = np.zeros((s, s, c))
        for g in recipe.gratings:
            phase = gen.uniform(0.0, 2.0 * np.pi, c)
            angle = 2.0 * np.pi * (g.u * rr + g.v * cc) / s
            img += g.amplitude * np.cos(angle[:, :, None] + phase)
        if recipe.n_spots:
            flat = gen.choice(s * s, size=recipe.n_spots, replace=False)
            values = recipe.spot_amplitude * gen.standard_normal((recipe.n_spots, c))
            img[flat // s, flat % s] += values
        if recipe.noise_sigma > 0.0:
            img += recipe.noise_sigma * gen.standard_normal((s, s, c))
        out[i] = img
    return out
