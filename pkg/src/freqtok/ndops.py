"""Dense linear algebra and Fourier primitives.

Conventions used throughout the package:

* a *token matrix* is a 2-D float64 ndarray, rows are tokens;
* an *attention map* is row-stochastic and square;
* a *grid* is a ``(side, side, channels)`` float64 ndarray of spatially
  arranged values.

All computation is 64-bit.  File payloads may arrive as float32 and are
widened on load (see :mod:`freqtok.ftkr`).
"""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Dense product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(a) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's maximum.

    Output rows are nonnegative and sum to 1 (within 1e-12) for any finite
    input, including rows with very large logits.
    """
    a = as_matrix(a, "softmax input")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def frobenius_norm(a) -> float:
    """sqrt of the sum of squared entries."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def as_grid(g, name: str = "grid") -> np.ndarray:
    """Coerce to a (side, side, channels) float64 array."""
    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must have shape (side, side, channels), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must have side >= 1")
    return arr


def dft2(grid) -> np.ndarray:
    """Unnormalized 2-D discrete Fourier transform, per channel.

    Input ``(side, side, channels)`` real, output same shape complex.
    ``idft2`` inverts it exactly (to rounding).  Energy satisfies Parseval:
    ``sum|F|^2 / side^2 == sum|x|^2`` per channel.
    """
    g = as_grid(grid)
    return np.fft.fft2(g, axes=(0, 1))


def idft2(spectrum) -> np.ndarray:
    """Inverse of :func:`dft2`; returns the real part."""
    s = np.asarray(spectrum)
    if s.ndim == 2:
        s = s[:, :, None]
    if s.ndim != 3 or s.shape[0] != s.shape[1]:
        raise ValueError(f"spectrum must be (side, side, channels), got {s.shape}")
    return np.real(np.fft.ifft2(s, axes=(0, 1)))


def freq_radius(side: int) -> np.ndarray:
    """Chebyshev radius ``max(|u|, |v|)`` of every DFT bin, shape (side, side).

    Frequencies are folded to the symmetric range, so radii run from 0 (the
    DC bin) to ``side // 2`` (the Nyquist corner for even sides).
    """
    idx = np.arange(side)
    folded = np.minimum(idx, side - idx)
    return np.maximum(folded[:, None], folded[None, :])
