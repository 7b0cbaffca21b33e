"""Class-color palette codec.

Dense label maps are represented as color images so that they can be fed
through the patch quantizer: class k paints as palette color k, and decoding
maps each (possibly reconstructed, hence noisy) pixel back to the nearest
palette color by squared RGB distance.

Conventions used throughout the package:
  label map   -- int array of shape (H, W), values in [0, K)
  color image -- uint8 array of shape (H, W, 3)
"""
from __future__ import annotations

import numpy as np


class PaletteError(ValueError):
    pass


def palette_for_classes(k: int) -> np.ndarray:
    """Deterministic palette of k pairwise-distinct colors spread over RGB.

    Uses the smallest per-channel level count s with s**3 >= k, levels at
    round(i * 255 / (s - 1)), and enumerates the (R, G, B) grid
    lexicographically, taking the first k colors.
    """
    if not 1 <= k <= 4096:
        raise PaletteError(f"class count {k} outside [1, 4096]")
    s = 1
    while s * s * s < k:
        s += 1
    if s == 1:
        levels = [0]
    else:
        levels = [round(i * 255 / (s - 1)) for i in range(s)]
    colors = []
    for r in levels:
        for g in levels:
            for b in levels:
                colors.append((r, g, b))
                if len(colors) == k:
                    return np.array(colors, dtype=np.uint8)
    raise PaletteError("unreachable")  # pragma: no cover


def encode_labels(labels: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Paint each class index with its palette color."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or (labels.size and labels.max() >= len(palette)):
        raise PaletteError(
            f"label out of range for palette of {len(palette)} classes"
        )
    return palette[labels]


def decode_labels(img: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Nearest-color discretization of an image back to class indices.

    Distance is squared Euclidean in RGB; ties break to the lowest class
    index (np.argmin's first-minimum rule).
    """
    img = np.asarray(img, dtype=np.int64)
    pal = palette.astype(np.int64)
    diff = img[..., None, :] - pal  # (H, W, K, 3)
    d2 = np.sum(diff * diff, axis=-1)
    return np.argmin(d2, axis=-1)
