"""Numpy implementations of the hot per-frame kernels.

These are the reference semantics; the compiled backend in ``_native.pyx``
must match them bit-for-bit on integer outputs and to float64 rounding on
the statistics. Keep the arithmetic expressions in the two files aligned.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"


def grayscale_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """Convert an interleaved row-major RGB u8 buffer to grayscale u8.

    Luma weights 0.299/0.587/0.114, rounded half-up.
    """
    px = np.asarray(rgb, dtype=np.uint8).reshape(-1, 3)
    y = 0.299 * px[:, 0] + 0.587 * px[:, 1] + 0.114 * px[:, 2] + 0.5
    return np.clip(np.floor(y), 0, 255).astype(np.uint8)


def histogram_u8(pixels: np.ndarray, bins: int) -> np.ndarray:
    """Normalized histogram of a u8 buffer; bin k covers [k*256/bins, (k+1)*256/bins)."""
    px = np.asarray(pixels, dtype=np.uint8)
    width = 256 // bins
    counts = np.bincount(px // width, minlength=bins)
    return counts.astype(np.float64) / px.size


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation over bins, population statistics.

    Degenerate case (either side has zero variance): 1.0 when the inputs are
    element-wise equal within 1e-12, else 0.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va * vb == 0.0:
        return 1.0 if float(np.max(np.abs(a - b), initial=0.0)) <= 1e-12 else 0.0
    return float(np.dot(da, db)) / float(np.sqrt(va * vb))
