"""Frequency-domain operators and rank-collapse metrics.

The central object is the mean-centering filter ``high_pass_center``:
``(I - (1/n) 11^T) X`` removes the token mean (the DC signal) and its
Frobenius norm measures how much high-frequency content a token matrix
carries.  Attention maps decompose into a uniform low-pass part and a
row-zero-sum high-pass residual; spectra of token grids are computed with
a 2-D DFT and split into Chebyshev-radius bands.

Band convention: the HF band contains bins with ``max(|u|, |v|) > side/4``
(a quarter-Nyquist split that keeps both bands populated on 14x14 grids).
Grid positions whose tokens were removed are filled with the mean of the
tokens placed, so spectra stay comparable across layers with different
token counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layout import TokenLayout
from .ndops import as_matrix, dft2, freq_radius, frobenius_norm
from .rng import SeededRng

_LOG_EPS = 1e-12


class DegenerateFeaturesError(ValueError):
    """Raised when a similarity is requested for zero-variance features."""


def high_pass_center(x) -> np.ndarray:
    """Subtract the token mean from every row: (I - (1/n) 11^T) X.

    Output column means are zero and the operation is idempotent.
    """
    x = as_matrix(x, "token matrix")
    return x - x.mean(axis=0, keepdims=True)


def decompose_attention(a) -> tuple[np.ndarray, np.ndarray]:
    """Split a row-stochastic map into (low_pass, high_pass).

    low_pass = (1/n) 11^T broadcasts the token mean to every row;
    high_pass = A - low_pass has rows summing to zero.  The two parts add
    back to A exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"attention map must be square, got {a.shape}")
    n = a.shape[0]
    low = np.full_like(a, 1.0 / n)
    return low, a - low


@dataclass(frozen=True)
class SpectrumReport:
    """Radial band statistics of one token grid.

    ``band_amplitude[k]`` is the mean DFT amplitude (|F| / side^2, averaged
    over channels) at Chebyshev radius k; ``band_energy_fraction`` sums to
    1; ``hf_band_energy`` is absolute (per-pixel scale) energy above the
    quarter-Nyquist radius; ``delta_log_amplitude`` is
    log(mean HF amplitude) - log(DC amplitude) with a 1e-12 guard.
    """

    side: int
    band_amplitude: np.ndarray
    band_energy_fraction: np.ndarray
    hf_band_energy: float
    hf_band_energy_fraction: float
    delta_log_amplitude: float


def grid_spectrum(grid) -> SpectrumReport:
    """Band statistics of a (side, side, channels) value grid."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim == 2:
        g = g[:, :, None]
    side = g.shape[0]
    f = dft2(g)
    amp = np.abs(f).mean(axis=2) / side**2
    energy = (np.abs(f) ** 2).mean(axis=2) / side**4

    radius = freq_radius(side)
    n_bands = side // 2 + 1
    band_amp = np.zeros(n_bands)
    band_energy = np.zeros(n_bands)
    for k in range(n_bands):
        mask = radius == k
        band_amp[k] = amp[mask].mean()
        band_energy[k] = energy[mask].sum()

    total = band_energy.sum()
    if total > 0.0:
        fractions = band_energy / total
    else:
        fractions = np.zeros(n_bands)
        fractions[0] = 1.0
    hf = np.arange(n_bands) * 4 > side
    hf_energy = float(band_energy[hf].sum())
    hf_fraction = float(fractions[hf].sum())
    hf_amp = float(band_amp[hf].mean()) if hf.any() else 0.0
    delta = float(np.log(hf_amp + _LOG_EPS) - np.log(band_amp[0] + _LOG_EPS))
    return SpectrumReport(side, band_amp, fractions, hf_energy, hf_fraction, delta)


def fill_token_grid(x, layout: TokenLayout, subset=None) -> np.ndarray:
    """(side, side, d) grid of image-token features.

    Tokens in ``subset`` (default: all image tokens) are placed at their
    grid coordinates; every other position takes the mean of the placed
    tokens.
    """
    x = np.asarray(x, dtype=np.float64)
    img = layout.image_indices()
    if subset is not None:
        chosen = np.asarray(subset, dtype=np.int64)
    else:
        chosen = img
    if chosen.size == 0:
        raise ValueError("no image tokens to place on the grid")
    side = layout.grid_side
    fill = x[chosen].mean(axis=0)
    grid = np.tile(fill, (side, side, 1))
    grid[layout.rows[chosen], layout.cols[chosen]] = x[chosen]
    return grid


def token_spectrum(x, layout: TokenLayout, subset=None) -> SpectrumReport:
    """Spectrum of the image-token grid (CLS and DC tokens excluded).

    Missing positions -- tokens removed by reduction, or outside
    ``subset`` -- are filled with the mean of the tokens placed.
    """
    return grid_spectrum(fill_token_grid(x, layout, subset))


def dc_similarity(x) -> np.ndarray:
    """Cosine similarity of every token against the token mean.

    Zero vectors (token or mean) map to similarity 0 by convention.
    """
    x = as_matrix(x, "token matrix")
    if x.shape[0] < 2:
        raise ValueError("dc_similarity needs at least two tokens")
    mean = x.mean(axis=0)
    mean_norm = np.linalg.norm(mean)
    norms = np.linalg.norm(x, axis=1)
    denom = norms * mean_norm
    out = np.zeros(x.shape[0])
    ok = denom > 0.0
    out[ok] = (x[ok] @ mean) / denom[ok]
    return out


def linear_cka(x, y) -> float:
    """Centered linear kernel alignment between two token matrices.

    Value in [0, 1]; 1 for identical features; invariant to orthogonal
    right-transforms and isotropic scaling of either argument.  Raises
    :class:`DegenerateFeaturesError` for zero-variance input.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError("linear_cka requires the same token count")
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    xnorm = frobenius_norm(xc.T @ xc)
    ynorm = frobenius_norm(yc.T @ yc)
    if xnorm == 0.0 or ynorm == 0.0:
        raise DegenerateFeaturesError("zero-variance features have no alignment")
    hsic = frobenius_norm(yc.T @ xc) ** 2
    return float(hsic / (xnorm * ynorm))


def awgn_probe(x, indices, sigma: float, rng: SeededRng) -> np.ndarray:
    """Perturb the selected tokens with N(0, sigma^2) noise per element."""
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    x = as_matrix(x, "token matrix").copy()
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and sigma > 0.0:
        x[idx] += rng.normal((idx.size, x.shape[1]), scale=sigma)
    return x


@dataclass(frozen=True)
class CollapseReport:
    """Per-layer high-pass norms, their consecutive ratios, and the CKA of
    each layer's image tokens (mean-filled grids) to the last layer's."""

    hf_norm: np.ndarray
    lambda_hat: np.ndarray
    cka_to_last: np.ndarray


def collapse_report(trace) -> CollapseReport:
    """Collapse metrics over a forward trace (sequence of layer records)."""
    records = list(trace)
    if not records:
        raise ValueError("trace is empty")
    hf = np.array([frobenius_norm(high_pass_center(r.tokens_out)) for r in records])
    lam = np.array(
        [hf[i + 1] / hf[i] if hf[i] > 0.0 else np.nan for i in range(len(hf) - 1)]
    )
    last = fill_token_grid(records[-1].tokens_out, records[-1].layout)
    last_flat = last.reshape(-1, last.shape[-1])
    cka = np.array(
        [
            linear_cka(
                fill_token_grid(r.tokens_out, r.layout).reshape(-1, last.shape[-1]),
                last_flat,
            )
            for r in records
        ]
    )
    return CollapseReport(hf, lam, cka)
