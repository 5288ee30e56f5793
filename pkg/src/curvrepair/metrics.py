"""Evaluation metrics: sampled mesh distances and image similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from zlib import crc32

import numpy as np
import scipy.ndimage
from scipy.spatial import cKDTree

from .mesh import TriMesh

# distances below this fraction of the diagonal are float dust, not error
ZERO_CLAMP = 1e-9

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MeshDistanceResult:
    max: float
    mean: float
    signed: np.ndarray  # per candidate vertex, fraction of truth diagonal
    diagonal: float
    mesh: TriMesh  # the candidate the signed values live on

    def __post_init__(self):
        if not (self.max >= self.mean >= 0.0):
            raise ValueError("distance summary must satisfy max >= mean >= 0")


@dataclass
class ImageMetricResult:
    l1: float
    psnr: float
    ssim: float


# ----------------------------------------------------------------------
# point-to-surface distance


def _closest_on_triangles(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Closest point on triangle i to point i, batched (Ericson's regions)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab = b - a
    ac = c - a
    ap = points - a

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = points - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = points - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(points)
    done = np.zeros(len(points), dtype=bool)

    def settle(mask, value):
        nonlocal done
        take = mask & ~done
        out[take] = value[take]
        done |= mask

    settle((d1 <= 0) & (d2 <= 0), a)  # vertex a
    settle((d3 >= 0) & (d4 <= d3), b)  # vertex b
    settle((d6 >= 0) & (d5 <= d6), c)  # vertex c

    vc = d1 * d4 - d3 * d2
    v_ab = np.divide(d1, d1 - d3, out=np.zeros_like(d1),
                     where=(d1 - d3) != 0)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)

    vb = d5 * d2 - d1 * d6
    w_ac = np.divide(d2, d2 - d6, out=np.zeros_like(d2),
                     where=(d2 - d6) != 0)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)

    va = d3 * d6 - d5 * d4
    w_bc = np.divide(d4 - d3, (d4 - d3) + (d5 - d6),
                     out=np.zeros_like(d4),
                     where=((d4 - d3) + (d5 - d6)) != 0)
    settle((va <= 0) & (d4 >= d3) & (d5 >= d6), b + w_bc[:, None] * (c - b))

    denom = va + vb + vc
    v = np.divide(vb, denom, out=np.zeros_like(vb), where=denom != 0)
    w = np.divide(vc, denom, out=np.zeros_like(vc), where=denom != 0)
    settle(np.ones(len(points), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


class _SurfaceIndex:
    """Nearest point-on-surface queries: centroid KD-tree prune plus an
    exact triangle refinement pass."""

    def __init__(self, mesh: TriMesh):
        self.tris = mesh.vertices[mesh.faces]
        self.centroids = self.tris.mean(axis=1)
        self.tree = cKDTree(self.centroids)
        self.radius = float(
            np.linalg.norm(self.tris - self.centroids[:, None, :], axis=2).max()
        )

    def query(self, points: np.ndarray):
        points = np.atleast_2d(points)
        k = min(8, len(self.centroids))
        _, guess = self.tree.query(points, k=k)
        guess = np.atleast_2d(guess)

        best_d = np.full(len(points), np.inf)
        best_face = np.zeros(len(points), dtype=np.int64)
        best_point = np.zeros_like(points)

        def refine(point_idx, face_idx):
            closest = _closest_on_triangles(
                points[point_idx], self.tris[face_idx]
            )
            d = np.linalg.norm(points[point_idx] - closest, axis=1)
            better = d < best_d[point_idx]
            idx = point_idx[better]
            best_d[idx] = d[better]
            best_face[idx] = face_idx[better]
            best_point[idx] = closest[better]

        for col in range(guess.shape[1]):
            refine(np.arange(len(points)), guess[:, col])

        # a closer triangle can only hide within best_d + its own radius
        ball = self.tree.query_ball_point(points, best_d + self.radius)
        pairs = [(i, f) for i, fs in enumerate(ball) for f in fs]
        if pairs:
            pi = np.asarray([p for p, _ in pairs], dtype=np.int64)
            fi = np.asarray([f for _, f in pairs], dtype=np.int64)
            refine(pi, fi)
        return best_d, best_face, best_point


def _surface_samples(mesh: TriMesh, density: float) -> np.ndarray:
    """Uniform area-weighted samples; the stream is a pure function of
    the geometry so either argument order of mesh_distance sees the
    same points."""
    areas = mesh.face_areas
    total = float(areas.sum())
    n = max(64, int(round(density * total)))
    rng = np.random.default_rng(crc32(mesh.vertices.tobytes()))
    faces = rng.choice(mesh.n_faces, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tris = mesh.vertices[mesh.faces[faces]]
    return (
        tris[:, 0]
        + u[:, None] * (tris[:, 1] - tris[:, 0])
        + v[:, None] * (tris[:, 2] - tris[:, 0])
    )


def mesh_distance(
    candidate: TriMesh, truth: TriMesh, samples_per_area: float = 4000.0
) -> MeshDistanceResult:
    """Symmetric sampled surface distance, as a fraction of the truth
    bounding-box diagonal.

    Both surfaces are sampled uniformly by area; every sample measures
    the exact distance to the nearest triangle of the other mesh, and
    max/mean pool both directions.  Per-vertex signed distances on the
    candidate take their sign from the side of the nearest truth
    triangle.  No registration is performed - the inputs must already
    be aligned.
    """
    if candidate.n_faces == 0 or truth.n_faces == 0:
        raise ValueError("mesh_distance needs two non-empty meshes")
    diagonal = float(np.linalg.norm(np.ptp(truth.vertices, axis=0)))
    if diagonal <= 0.0:
        raise ValueError("truth mesh has a degenerate bounding box")

    to_truth = _SurfaceIndex(truth)
    to_candidate = _SurfaceIndex(candidate)

    d_fwd, _, _ = to_truth.query(_surface_samples(candidate, samples_per_area))
    d_bwd, _, _ = to_candidate.query(_surface_samples(truth, samples_per_area))
    pooled = np.concatenate([d_fwd, d_bwd]) / diagonal
    pooled[pooled < ZERO_CLAMP] = 0.0

    vd, vf, vp = to_truth.query(candidate.vertices)
    normals = truth.face_normals[vf]
    side = np.einsum("ij,ij->i", candidate.vertices - vp, normals)
    vd = vd / diagonal
    vd[vd < ZERO_CLAMP] = 0.0
    signed = np.where(side < 0.0, -vd, vd)

    top = float(pooled.max())
    # pairwise-summation rounding can push the mean of a constant array
    # one ulp past its max
    return MeshDistanceResult(
        max=top,
        mean=min(float(pooled.mean()), top),
        signed=signed,
        diagonal=diagonal,
        mesh=candidate,
    )


# ----------------------------------------------------------------------
# image metrics


def _gaussian_window() -> np.ndarray:
    offsets = np.arange(-SSIM_RADIUS, SSIM_RADIUS + 1, dtype=np.float64)
    g = np.exp(-(offsets**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed(channel: np.ndarray, window: np.ndarray) -> np.ndarray:
    full = scipy.ndimage.correlate(channel, window, mode="constant")
    return full[SSIM_RADIUS:-SSIM_RADIUS, SSIM_RADIUS:-SSIM_RADIUS]


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    window = _gaussian_window()
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    mu_x = _windowed(x, window)
    mu_y = _windowed(y, window)
    var_x = _windowed(x * x, window) - mu_x * mu_x
    var_y = _windowed(y * y, window) - mu_y * mu_y
    cov = _windowed(x * y, window) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


def image_metrics(a: np.ndarray, b: np.ndarray) -> ImageMetricResult:
    """L1 / PSNR / SSIM between two uint8 RGB images of equal size.

    L1 is normalized to [0, 1]; PSNR uses peak 255 and is infinite for
    identical inputs; SSIM uses the standard 11x11 Gaussian window with
    K1=0.01, K2=0.03, averaged over channels.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8 images")
    if min(a.shape[0], a.shape[1]) < 2 * SSIM_RADIUS + 1:
        raise ValueError("images too small for the 11x11 SSIM window")

    xa = a.astype(np.float64)
    xb = b.astype(np.float64)
    diff = xa - xb
    l1 = float(np.abs(diff).mean() / 255.0)
    mse = float((diff**2).mean())
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(255.0**2 / mse)
    ssim = float(
        np.mean([_ssim_channel(xa[..., c], xb[..., c]) for c in range(3)])
    )
    return ImageMetricResult(l1=l1, psnr=psnr, ssim=ssim)


# ----------------------------------------------------------------------
# distance visualization


def color_by_distance(result: MeshDistanceResult):
    """Diverging blue-white-red vertex colors for signed distances.

    Zero maps to white, the extremes to saturated blue (inside) and red
    (outside); the scale is symmetric at plus/minus the largest
    magnitude.  Returns the candidate mesh and a (n, 3) uint8 color
    array ready for PLY export.
    """
    signed = np.asarray(result.signed, dtype=np.float64)
    if len(signed) != result.mesh.n_vertices:
        raise ValueError("signed distances do not match the mesh")
    peak = float(np.abs(signed).max())
    if peak == 0.0:
        t = np.zeros_like(signed)
    else:
        t = signed / peak  # [-1, 1]
    colors = np.empty((len(signed), 3), dtype=np.float64)
    cold = np.array([0.0, 0.0, 255.0])
    white = np.array([255.0, 255.0, 255.0])
    hot = np.array([255.0, 0.0, 0.0])
    below = t < 0.0
    colors[below] = white + (-t[below])[:, None] * (cold - white)
    colors[~below] = white + t[~below][:, None] * (hot - white)
    return result.mesh, np.rint(colors).astype(np.uint8)
