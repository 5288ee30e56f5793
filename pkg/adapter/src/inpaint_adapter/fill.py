"""Model-free hole filling used by the stub mode."""

import numpy as np
import scipy.sparse
import scipy.sparse.linalg


def diffusion_fill(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked pixels with the steady state of neighbor averaging.

    Each hole pixel converges to the average of its in-bounds 4-neighbors
    (the harmonic extension of the surrounding pixels), computed directly
    as a sparse linear solve.  Unmasked pixels pass through untouched.  A
    fully masked image has no context to diffuse from and comes back as
    mid-gray.

    Parameters
    ----------
    image : (H, W, 3) uint8
    mask : (H, W) bool
        True marks pixels to replace.

    Returns
    -------
    (H, W, 3) uint8
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("image must be (H, W, 3) uint8")
    if mask.shape != image.shape[:2] or mask.dtype != np.bool_:
        raise ValueError("mask must be (H, W) bool matching the image")

    if not mask.any():
        return image.copy()
    if mask.all():
        return np.full_like(image, 127)

    h, w = mask.shape
    index = np.full((h, w), -1, dtype=np.int64)
    rows, cols = np.nonzero(mask)
    n = len(rows)
    index[rows, cols] = np.arange(n)

    mat_rows, mat_cols, mat_vals = [], [], []
    rhs = np.zeros((n, 3), dtype=np.float64)
    degree = np.zeros(n, dtype=np.float64)
    pixels = image.astype(np.float64)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = rows + dr, cols + dc
        inside = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        degree += inside
        nr, nc = nr[inside], nc[inside]
        here = np.nonzero(inside)[0]
        neighbor = index[nr, nc]
        hole = neighbor >= 0
        mat_rows.append(here[hole])
        mat_cols.append(neighbor[hole])
        mat_vals.append(np.full(hole.sum(), -1.0))
        rhs[here[~hole]] += pixels[nr[~hole], nc[~hole]]

    mat_rows.append(np.arange(n))
    mat_cols.append(np.arange(n))
    mat_vals.append(degree)
    system = scipy.sparse.csc_matrix(
        (np.concatenate(mat_vals),
         (np.concatenate(mat_rows), np.concatenate(mat_cols))),
        shape=(n, n),
    )
    solve = scipy.sparse.linalg.factorized(system)

    out = image.copy()
    for ch in range(3):
        values = solve(rhs[:, ch])
        out[rows, cols, ch] = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    return out
