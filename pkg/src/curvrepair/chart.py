"""Disk patches, planar parametrization, and chart rasterization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .features import curvature_to_color
from .mesh import (
    BoundaryLoop,
    MeshTopologyError,
    TriMesh,
    boundary_loops,
    face_submesh,
    is_topological_disk,
    vertex_graph_distances,
)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

UV_MARGIN = 0.05  # charts live inside [margin, 1 - margin]^2


@dataclass(frozen=True)
class Patch:
    """Disk-shaped submesh with back references into its parent mesh."""

    submesh: TriMesh
    parent_vertices: np.ndarray  # (n,) parent vertex id per submesh vertex
    parent_faces: np.ndarray  # (m,) parent face id per submesh face

    def local_vertex(self, parent_id: int) -> int:
        hit = np.nonzero(self.parent_vertices == parent_id)[0]
        if hit.size == 0:
            raise KeyError(f"vertex {parent_id} is not part of the patch")
        return int(hit[0])


@dataclass(frozen=True)
class PatchChart:
    """A parametrized patch: per-vertex UV inside the margin box."""

    patch: Patch
    uv: np.ndarray  # (n, 2) in [UV_MARGIN, 1 - UV_MARGIN]^2
    resolution: int

    @property
    def submesh(self) -> TriMesh:
        return self.patch.submesh

    @property
    def parent_vertices(self) -> np.ndarray:
        return self.patch.parent_vertices

    @property
    def parent_faces(self) -> np.ndarray:
        return self.patch.parent_faces


# ----------------------------------------------------------------------
# patch extraction


def extract_patch(mesh: TriMesh, loop: BoundaryLoop, rings: int = 8) -> Patch:
    """Cut out the disk patch around a (filled) hole loop.

    The patch consists of all faces touching vertices within ``rings``
    breadth-first rings of the loop.  Enclosed cavities — complement face
    components other than the largest one, e.g. the middle of a filled
    hole lying deeper than ``rings`` — are absorbed.  If the full ring
    count would break disk topology (wrapping around the shape, touching
    another hole), the expansion stops at the widest ring count that
    still forms a disk.

    Raises
    ------
    MeshTopologyError
        If no ring count down to 0 yields a topological disk.
    """
    if rings < 0:
        raise ValueError("rings must be >= 0")
    dist = vertex_graph_distances(mesh, loop.vertices, max_depth=rings + 1)
    incident = mesh.vertex_faces
    for r in range(rings, -1, -1):
        near = np.nonzero((dist >= 0) & (dist <= r))[0]
        face_ids = sorted({int(f) for v in near for f in incident[v]})
        face_ids = _absorb_cavities(mesh, face_ids)
        sub, vmap, fmap = face_submesh(mesh, face_ids)
        if is_topological_disk(sub):
            if r < rings:
                logger.info("patch expansion stopped at %d rings", r)
            return Patch(submesh=sub, parent_vertices=vmap, parent_faces=fmap)
    raise MeshTopologyError("cannot form a disk patch around the loop")


def _absorb_cavities(mesh: TriMesh, face_ids) -> list:
    """Add every complement face component except the largest."""
    selected = np.zeros(mesh.n_faces, dtype=bool)
    selected[list(face_ids)] = True
    if selected.all():
        return sorted(int(f) for f in face_ids)
    adj = mesh.face_adjacency
    comp = np.full(mesh.n_faces, -1, dtype=np.int64)
    n_comp = 0
    for f0 in range(mesh.n_faces):
        if selected[f0] or comp[f0] >= 0:
            continue
        stack = [f0]
        comp[f0] = n_comp
        while stack:
            fi = stack.pop()
            for fj in adj[fi]:
                fj = int(fj)
                if not selected[fj] and comp[fj] < 0:
                    comp[fj] = n_comp
                    stack.append(fj)
        n_comp += 1
    if n_comp <= 1:
        return sorted(int(f) for f in face_ids)
    sizes = np.bincount(comp[comp >= 0], minlength=n_comp)
    outside = int(np.argmax(sizes))
    absorb = (comp >= 0) & (comp != outside)
    out = set(int(f) for f in face_ids) | set(np.nonzero(absorb)[0].tolist())
    return sorted(out)


# ----------------------------------------------------------------------
# parametrization


def parametrize(patch: Patch, resolution: int = 512) -> PatchChart:
    """Flatten a disk patch to the unit square.

    The boundary maps to a circle by cumulative arclength; interior
    vertices are placed by a convex-combination (harmonic) solve using
    cotangent weights clamped positive, falling back to uniform weights
    when the cotangent system is singular.  The resulting disk is scaled
    into the ``[0.05, 0.95]^2`` margin box; no UV triangle comes out
    flipped.

    Raises
    ------
    MeshTopologyError
        If the patch is not a topological disk.
    """
    sub = patch.submesh
    if not is_topological_disk(sub):
        raise MeshTopologyError("parametrization requires a topological disk")
    loop = boundary_loops(sub)[0]
    n = sub.n_vertices

    ring = np.zeros((len(loop), 2))
    lens = loop.edge_lengths(sub)
    total = float(lens.sum())
    if total <= 0:
        raise MeshTopologyError("boundary loop has zero length")
    cum = np.concatenate([[0.0], np.cumsum(lens[:-1])])
    theta = 2.0 * np.pi * cum / total
    ring[:, 0] = np.cos(theta)
    ring[:, 1] = np.sin(theta)

    boundary_ids = loop.vertices
    is_boundary = np.zeros(n, dtype=bool)
    is_boundary[boundary_ids] = True
    interior_ids = np.nonzero(~is_boundary)[0]

    uv = np.zeros((n, 2))
    uv[boundary_ids] = ring
    if interior_ids.size:
        try:
            uv[interior_ids] = _convex_solve(
                sub, boundary_ids, interior_ids, ring, weights="cotangent"
            )
        except RuntimeError:
            logger.warning("cotangent parametrization singular; using uniform weights")
            uv[interior_ids] = _convex_solve(
                sub, boundary_ids, interior_ids, ring, weights="uniform"
            )

    # orient so every UV triangle has positive signed area
    tri = uv[sub.faces]
    signed = 0.5 * (
        (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
        - (tri[:, 2, 0] - tri[:, 0, 0]) * (tri[:, 1, 1] - tri[:, 0, 1])
    )
    if signed.sum() < 0:
        uv[:, 1] = -uv[:, 1]

    uv = 0.5 + (0.5 - UV_MARGIN) * uv
    return PatchChart(patch=patch, uv=uv, resolution=int(resolution))


def _convex_solve(sub, boundary_ids, interior_ids, ring, weights: str):
    n = sub.n_vertices
    v = sub.vertices
    f = sub.faces
    if weights == "cotangent":
        w_entries = []
        for k in range(3):
            a = v[f[:, k]]
            b = v[f[:, (k + 1) % 3]]
            c = v[f[:, (k + 2) % 3]]
            e1, e2 = b - a, c - a
            cross = np.linalg.norm(np.cross(e1, e2), axis=1)
            cross = np.where(cross < 1e-300, 1e-300, cross)
            cot = np.einsum("ij,ij->i", e1, e2) / cross
            w_entries.append(np.maximum(cot, 1e-8))
        rows = np.concatenate(
            [f[:, 1], f[:, 2], f[:, 2], f[:, 0], f[:, 0], f[:, 1]]
        )
        cols = np.concatenate(
            [f[:, 2], f[:, 1], f[:, 0], f[:, 2], f[:, 1], f[:, 0]]
        )
        vals = np.concatenate(
            [w_entries[0], w_entries[0], w_entries[1], w_entries[1], w_entries[2], w_entries[2]]
        )
        W = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    else:
        e = sub.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        vals = np.ones(len(rows))
        W = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    deg = np.asarray(W.sum(axis=1)).ravel()
    deg = np.where(deg <= 0, 1.0, deg)
    interior_pos = {int(i): k for k, i in enumerate(interior_ids)}
    W_coo = W.tocoo()
    ii, jj, ww = [], [], []
    rhs = np.zeros((len(interior_ids), 2))
    bpos = np.zeros(n, dtype=np.int64)
    bpos[boundary_ids] = np.arange(len(boundary_ids))
    on_boundary = np.zeros(n, dtype=bool)
    on_boundary[boundary_ids] = True
    for r, c, w in zip(W_coo.row, W_coo.col, W_coo.data):
        if int(r) not in interior_pos:
            continue
        k = interior_pos[int(r)]
        wn = w / deg[r]
        if on_boundary[c]:
            rhs[k] += wn * ring[bpos[c]]
        else:
            ii.append(k)
            jj.append(interior_pos[int(c)])
            ww.append(wn)
    m = len(interior_ids)
    P = scipy.sparse.coo_matrix((ww, (ii, jj)), shape=(m, m)).tocsr()
    A = scipy.sparse.identity(m, format="csr") - P
    sol = scipy.sparse.linalg.spsolve(A, rhs)
    sol = np.asarray(sol).reshape(m, 2)
    if not np.isfinite(sol).all():
        raise RuntimeError("parametrization solve produced non-finite values")
    return sol


# ----------------------------------------------------------------------
# rasterization


def _uv_to_pixel_grid(resolution: int):
    centers = (np.arange(resolution) + 0.5) / resolution
    return centers


def rasterize(chart: PatchChart, field: np.ndarray) -> np.ndarray:
    """Render the chart's color-coded field onto a square image.

    Every pixel whose center lies inside a UV triangle receives the
    barycentric blend of the triangle's vertex colors (the rainbow coding
    of ``field``); everything else stays black.  Deterministic: faces are
    painted in face order.

    Returns an (R, R, 3) uint8 array.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.shape != (chart.submesh.n_vertices,):
        raise ValueError("field must hold one value per patch vertex")
    colors = curvature_to_color(field).astype(np.float64)
    img = np.zeros((chart.resolution, chart.resolution, 3))
    _paint(chart, img, colors, range(chart.submesh.n_faces))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def rasterize_mask(chart: PatchChart, hole_faces) -> np.ndarray:
    """Binary mask of the pixels covered by the given submesh faces."""
    out = np.zeros((chart.resolution, chart.resolution), dtype=bool)
    faces = chart.submesh.faces
    uv = chart.uv
    res = chart.resolution
    for fi in hole_faces:
        tri = uv[faces[int(fi)]]
        cover = _pixels_in_triangle(tri, res)
        if cover is not None:
            rows, cols, _ = cover
            out[rows, cols] = True
    return out


def chart_coverage(chart: PatchChart) -> np.ndarray:
    """Bool mask of every pixel covered by any chart face."""
    return rasterize_mask(chart, range(chart.submesh.n_faces))


def _pixels_in_triangle(tri: np.ndarray, res: int):
    """Pixel rows/cols whose centers fall inside a UV triangle, plus
    barycentric coordinates (rows, cols, (k, 3) lambdas)."""
    area2 = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (
        tri[2, 0] - tri[0, 0]
    ) * (tri[1, 1] - tri[0, 1])
    if abs(area2) < 1e-18:
        return None
    lo = tri.min(axis=0)
    hi = tri.max(axis=0)
    c0 = max(int(np.floor(lo[0] * res - 0.5)), 0)
    c1 = min(int(np.ceil(hi[0] * res - 0.5)), res - 1)
    r0 = max(int(np.floor(lo[1] * res - 0.5)), 0)
    r1 = min(int(np.ceil(hi[1] * res - 0.5)), res - 1)
    if c1 < c0 or r1 < r0:
        return None
    us = (np.arange(c0, c1 + 1) + 0.5) / res
    vs = (np.arange(r0, r1 + 1) + 0.5) / res
    uu, vv = np.meshgrid(us, vs)
    l0 = ((tri[1, 0] - uu) * (tri[2, 1] - vv) - (tri[2, 0] - uu) * (tri[1, 1] - vv)) / area2
    l1 = ((tri[2, 0] - uu) * (tri[0, 1] - vv) - (tri[0, 0] - uu) * (tri[2, 1] - vv)) / area2
    l2 = 1.0 - l0 - l1
    inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
    if not inside.any():
        return None
    rr, cc = np.nonzero(inside)
    lam = np.stack([l0[rr, cc], l1[rr, cc], l2[rr, cc]], axis=1)
    return rr + r0, cc + c0, lam


def _paint(chart: PatchChart, img: np.ndarray, colors: np.ndarray, face_ids) -> None:
    faces = chart.submesh.faces
    uv = chart.uv
    res = chart.resolution
    for fi in face_ids:
        ids = faces[int(fi)]
        cover = _pixels_in_triangle(uv[ids], res)
        if cover is None:
            continue
        rows, cols, lam = cover
        img[rows, cols] = lam @ colors[ids]


# ----------------------------------------------------------------------
# image sampling


def sample_image_at_vertices(chart: PatchChart, image: np.ndarray, vertex_ids) -> np.ndarray:
    """Bilinear image lookups at submesh vertices' UV positions.

    Pixel centers sit at (col + 0.5) / R horizontally and
    (row + 0.5) / R vertically; lookups are clamped at the borders.
    Returns float values, shape (k, channels).
    """
    h, w = image.shape[:2]
    uv = chart.uv[np.asarray(vertex_ids, dtype=np.int64)]
    x = uv[:, 0] * w - 0.5
    y = uv[:, 1] * h - 0.5
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(x - x0, 0.0, 1.0)[:, None]
    fy = np.clip(y - y0, 0.0, 1.0)[:, None]
    img = image.astype(np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
        fx, fy = fx[:, 0:1], fy[:, 0:1]
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def sample_image_at_vertex(chart: PatchChart, image: np.ndarray, vertex: int) -> np.ndarray:
    """Bilinear lookup for a single submesh vertex."""
    return sample_image_at_vertices(chart, image, [int(vertex)])[0]
