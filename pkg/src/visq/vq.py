"""Patch codebook: dense images <-> grids of discrete visual tokens.

Images are cut into non-overlapping p x p patches, flattened to vectors in
[0, 1]^(3p^2), and quantized to the nearest of V learned codebook entries.
The codebook is fit with seeded k-means++ initialization followed by Lloyd
iterations; empty clusters are reseeded to the patch farthest from its
assigned centroid, which keeps the mean squared assignment distance
non-increasing from one iteration to the next.

Fitting runs over deduplicated patches weighted by multiplicity. That is
mathematically the same objective and the same updates as running over the
raw patch multiset (means and distances are identical), just cheaper, and it
makes "V distinct patches with V entries" converge to zero error exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CodebookError(ValueError):
    pass


@dataclass
class PatchCodebook:
    patch_size: int
    entries: np.ndarray  # (V, 3 * patch_size**2) float32 in [0, 1]
    fitted: bool = True
    fit_objectives: list[float] | None = None  # per-iteration cost trace from fitting

    @property
    def size(self) -> int:
        return len(self.entries)

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.entries)):
            raise CodebookError("non-finite codebook entry")


def image_to_patches(img: np.ndarray, p: int) -> np.ndarray:
    """(H, W, 3) uint8 -> (H/p * W/p, 3p^2) float rows in [0, 1], row-major."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if h % p or w % p:
        raise CodebookError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = img.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh * gw, 3 * p * p).astype(np.float64) / 255.0


def patches_to_image(patches: np.ndarray, grid_shape: tuple[int, int], p: int) -> np.ndarray:
    """Inverse of image_to_patches; values x255 rounded and clamped to uint8."""
    gh, gw = grid_shape
    x = patches.reshape(gh, gw, p, p, 3).transpose(0, 2, 1, 3, 4)
    img = x.reshape(gh * p, gw * p, 3)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _nearest(points: np.ndarray, centers: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Index of the nearest center per point; ties to the lowest index.

    Distances are exact squared differences (no expansion tricks) computed in
    chunks to bound memory.
    """
    out = np.empty(len(points), dtype=np.int64)
    for lo in range(0, len(points), chunk):
        hi = min(lo + chunk, len(points))
        d = points[lo:hi, None, :] - centers[None, :, :]
        out[lo:hi] = np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)
    return out


def _assignment_cost(points: np.ndarray, centers: np.ndarray, weights: np.ndarray) -> float:
    assign = _nearest(points, centers)
    d = points - centers[assign]
    return float(np.sum(weights * np.einsum("ij,ij->i", d, d)) / np.sum(weights))


def fit_patch_codebook(
    images: list[np.ndarray],
    n_entries: int,
    patch_size: int = 4,
    iters: int = 25,
    seed: int = 0,
    restarts: int = 1,
) -> PatchCodebook:
    """k-means over all non-overlapping patches of the given images.

    The returned codebook carries the per-iteration objective trace (mean
    squared assignment distance, evaluated after each center update) in
    fit_objectives. With restarts > 1 the whole fit is repeated with derived
    seeds and the codebook with the lowest final objective wins
    (deterministic given the base seed).
    """
    if restarts > 1:
        fits = [
            fit_patch_codebook(images, n_entries, patch_size, iters, seed=seed * 7919 + r)
            for r in range(restarts)
        ]
        return min(fits, key=lambda cb: cb.fit_objectives[-1])
    if not images:
        raise CodebookError("no images to fit on")
    all_patches = np.concatenate([image_to_patches(img, patch_size) for img in images])
    points, inverse, counts = np.unique(
        all_patches, axis=0, return_inverse=True, return_counts=True
    )
    del inverse
    if len(points) < n_entries:
        raise CodebookError(
            f"only {len(points)} distinct patches available for {n_entries} entries"
        )
    weights = counts.astype(np.float64)
    rng = np.random.default_rng(seed)

    # k-means++ seeding: weighted D^2 sampling
    centers = np.empty((n_entries, points.shape[1]), dtype=np.float64)
    first = rng.choice(len(points), p=weights / weights.sum())
    centers[0] = points[first]
    d2 = np.einsum("ij,ij->i", points - centers[0], points - centers[0])
    for k in range(1, n_entries):
        probs = weights * d2
        total = probs.sum()
        if total <= 0.0:
            # all remaining mass sits on existing centers; any uncovered point works
            idx = int(np.argmax(d2))
        else:
            idx = rng.choice(len(points), p=probs / total)
        centers[k] = points[idx]
        dk = np.einsum("ij,ij->i", points - centers[k], points - centers[k])
        d2 = np.minimum(d2, dk)

    objectives: list[float] = []
    for _ in range(iters):
        assign = _nearest(points, centers)
        residual = points - centers[assign]
        per_point = np.einsum("ij,ij->i", residual, residual)
        wsum = np.zeros(n_entries)
        np.add.at(wsum, assign, weights)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, assign, points * weights[:, None])
        nonempty = wsum > 0
        new_centers[nonempty] /= wsum[nonempty, None]
        # reseed each empty cluster to the currently worst-represented patch
        for k in np.flatnonzero(~nonempty):
            far = int(np.argmax(per_point))
            new_centers[k] = points[far]
            per_point[far] = 0.0
        centers = new_centers
        objectives.append(_assignment_cost(points, centers, weights))
    return PatchCodebook(
        patch_size=patch_size,
        entries=centers.astype(np.float32),
        fit_objectives=objectives,
    )


def vq_encode(img: np.ndarray, codebook: PatchCodebook) -> np.ndarray:
    """Quantize an image to a (H/p, W/p) grid of local visual token ids."""
    if not codebook.fitted:
        raise CodebookError("codebook not fitted")
    p = codebook.patch_size
    h, w = np.asarray(img).shape[:2]
    patches = image_to_patches(img, p)
    ids = _nearest(patches, codebook.entries.astype(np.float64))
    return ids.reshape(h // p, w // p)


def vq_decode(grid: np.ndarray, codebook: PatchCodebook) -> np.ndarray:
    """Replace each grid cell by its codebook patch."""
    grid = np.asarray(grid)
    if grid.min(initial=0) < 0 or (grid.size and grid.max() >= codebook.size):
        raise CodebookError(f"token id out of range [0, {codebook.size})")
    patches = codebook.entries.astype(np.float64)[grid.reshape(-1)]
    return patches_to_image(patches, grid.shape, codebook.patch_size)
