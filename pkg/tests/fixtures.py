"""Shared synthetic meshes and independent reference computations.

Everything in this module is deliberately written in the most direct way
possible (plain loops, no reuse of library internals) so tests can compare
library output against independently derived expectations.
"""

from __future__ import annotations

import math

import numpy as np

from curvrepair.mesh import TriMesh


# ----------------------------------------------------------------------
# synthetic meshes


def tetrahedron() -> TriMesh:
    v = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    # outward-facing counter-clockwise winding
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)


def single_triangle() -> TriMesh:
    return TriMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )


def icosahedron_raw():
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere.

    subdiv 3 has 642 vertices / 1280 faces; subdiv 4 has 2562 / 5120.
    """
    verts, faces = icosahedron_raw()
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        midpoint: dict = {}
        new_faces = []

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                p = np.asarray(verts[i]) + np.asarray(verts[j])
                p /= np.linalg.norm(p)
                midpoint[key] = len(verts)
                verts.append(tuple(p))
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.asarray(new_faces, dtype=np.int64)
    v = np.asarray(verts, dtype=np.float64) * radius
    return TriMesh(v, faces)


def flat_grid(nx: int = 12, ny: int = 12, spacing: float = 1.0) -> TriMesh:
    """Regular triangulated grid in the z = 0 plane."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    v = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], axis=1)
    f = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            f.append([a, b, d])
            f.append([a, d, c])
    return TriMesh(v, np.asarray(f, dtype=np.int64))


def remove_vertices(mesh: TriMesh, removed) -> TriMesh:
    """Delete the given vertices and every face touching them (compacting)."""
    removed = set(int(v) for v in removed)
    keep_face = [
        i
        for i, (a, b, c) in enumerate(mesh.faces)
        if not ({int(a), int(b), int(c)} & removed)
    ]
    faces = mesh.faces[keep_face]
    used = sorted(set(int(x) for x in faces.ravel()))
    remap = {p: i for i, p in enumerate(used)}
    new_faces = np.array([[remap[int(a)], remap[int(b)], remap[int(c)]] for a, b, c in faces])
    return TriMesh(mesh.vertices[used], new_faces)


def sphere_with_cap_hole(subdivisions: int = 4, frac: float = 0.05, seed_vertex=None):
    """Unit icosphere with a breadth-first cap of ~frac of the vertices removed.

    Returns (damaged_mesh, truth_mesh).
    """
    truth = icosphere(subdivisions)
    target = int(round(frac * truth.n_vertices))
    if seed_vertex is None:
        seed_vertex = int(np.argmax(truth.vertices[:, 2]))
    removed = bfs_region(truth, seed_vertex, target)
    return remove_vertices(truth, removed), truth


def bfs_region(mesh: TriMesh, seed: int, count: int) -> list:
    """First ``count`` vertices in breadth-first order from ``seed``
    (layer by layer, ascending id inside each layer)."""
    out = [int(seed)]
    chosen = {int(seed)}
    frontier = [int(seed)]
    nbr = mesh.vertex_neighbors
    while len(out) < count and frontier:
        candidates = sorted(
            {int(w) for v in frontier for w in nbr[v]} - chosen
        )
        if not candidates:
            break
        for w in candidates:
            if len(out) >= count:
                break
            out.append(w)
            chosen.add(w)
        frontier = [w for w in candidates if w in chosen]
    return out[:count]


def torus(nu: int = 16, nv: int = 8, ring_radius: float = 2.0, tube_radius: float = 0.7) -> TriMesh:
    verts = []
    for i in range(nu):
        for j in range(nv):
            u = 2 * math.pi * i / nu
            w = 2 * math.pi * j / nv
            x = (ring_radius + tube_radius * math.cos(w)) * math.cos(u)
            y = (ring_radius + tube_radius * math.cos(w)) * math.sin(u)
            z = tube_radius * math.sin(w)
            verts.append([x, y, z])
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


def bumpy_sphere(model_seed: int, subdivisions: int = 3) -> TriMesh:
    """Deterministic lumpy closed surface for dataset tests."""
    base = icosphere(subdivisions)
    rng = np.random.default_rng(1000 + model_seed)
    a, b, c = rng.uniform(1.0, 5.0, size=3)
    p, q, r = rng.uniform(0.1, 0.25, size=3)
    v = base.vertices
    bump = 1.0 + p * np.sin(a * v[:, 0] * 3.1) + q * np.cos(b * v[:, 1] * 2.7) + r * np.sin(c * v[:, 2] * 2.3)
    stretch = rng.uniform(0.8, 1.4, size=3)
    return TriMesh(v * bump[:, None] * stretch, base.faces)


# ----------------------------------------------------------------------
# reference computations (oracles)


def brute_force_fps(vertices: np.ndarray, k: int, first: int) -> list:
    """Exhaustive greedy farthest-point choice over squared distances.

    At each step every vertex's minimum squared distance to the selected
    set is recomputed from scratch; the smallest index wins ties.
    """
    chosen = [int(first)]
    for _ in range(k - 1):
        best_idx, best_score = -1, -1.0
        for v in range(len(vertices)):
            if v in chosen:
                continue
            dmin = min(
                float(np.sum((vertices[v] - vertices[c]) ** 2)) for c in chosen
            )
            if dmin > best_score:
                best_score, best_idx = dmin, v
        chosen.append(best_idx)
    return chosen


def per_seed_bfs_labels(mesh: TriMesh, seeds) -> np.ndarray:
    """Graph-distance Voronoi labels: one BFS per seed, then argmin with
    ties going to the lower seed position."""
    n = mesh.n_vertices
    dists = []
    for s in seeds:
        d = {int(s): 0}
        frontier = [int(s)]
        while frontier:
            nxt = []
            for v in frontier:
                for w in mesh.vertex_neighbors[v]:
                    w = int(w)
                    if w not in d:
                        d[w] = d[v] + 1
                        nxt.append(w)
            frontier = nxt
        dists.append([d.get(v, 10 ** 9) for v in range(n)])
    dists = np.asarray(dists)
    return np.argmin(dists, axis=0)


def shoelace_area(p0, p1, p2) -> float:
    """Signed area of a 2-D triangle."""
    return 0.5 * (
        (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    )


def point_in_triangle_2d(pt, p0, p1, p2) -> bool:
    a = shoelace_area(p0, p1, p2)
    if a == 0:
        return False
    s0 = shoelace_area(pt, p1, p2) / a
    s1 = shoelace_area(p0, pt, p2) / a
    s2 = shoelace_area(p0, p1, pt) / a
    return s0 >= 0 and s1 >= 0 and s2 >= 0


def bilinear_reference(img: np.ndarray, x: float, y: float):
    """Textbook bilinear lookup at continuous pixel coordinates (x right,
    y down, integer coordinates at pixel centers), clamped at the edges."""
    h, w = img.shape[:2]
    x0 = min(max(int(math.floor(x)), 0), w - 1)
    y0 = min(max(int(math.floor(y)), 0), h - 1)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx = min(max(x - x0, 0.0), 1.0)
    fy = min(max(y - y0, 0.0), 1.0)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def gaussian_kernel_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(xs ** 2) / (2 * sigma ** 2))
    return k / k.sum()


def ssim_reference(a: np.ndarray, b: np.ndarray) -> float:
    """Sliding-window SSIM with an 11x11 Gaussian (sigma 1.5), K1=0.01,
    K2=0.03, L=255, averaged over all fully valid windows and channels.

    Direct per-window computation; quadratic cost, so keep inputs small.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    k1d = gaussian_kernel_1d()
    w = np.outer(k1d, k1d)
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    h, wd, ch = a.shape
    vals = []
    for c in range(ch):
        for i in range(h - 10):
            for j in range(wd - 10):
                wa = a[i : i + 11, j : j + 11, c]
                wb = b[i : i + 11, j : j + 11, c]
                mu_a = float((w * wa).sum())
                mu_b = float((w * wb).sum())
                var_a = float((w * wa * wa).sum()) - mu_a ** 2
                var_b = float((w * wb * wb).sum()) - mu_b ** 2
                cov = float((w * wa * wb).sum()) - mu_a * mu_b
                vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
                )
    return float(np.mean(vals))


def count_boundary_loops_reference(mesh: TriMesh) -> int:
    """Count boundary loops by walking edges seen exactly once."""
    seen: dict = {}
    for a, b, c in mesh.faces:
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            seen[key] = seen.get(key, 0) + 1
    boundary = [e for e, n in seen.items() if n == 1]
    adj: dict = {}
    for a, b in boundary:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    unvisited = set(adj)
    loops = 0
    while unvisited:
        loops += 1
        stack = [next(iter(unvisited))]
        while stack:
            v = stack.pop()
            if v in unvisited:
                unvisited.remove(v)
                stack.extend(adj[v])
    return loops
