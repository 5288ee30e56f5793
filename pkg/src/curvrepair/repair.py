"""Coarse-to-fine hole repair.

Each hole is closed in two stages.  A coarse stage triangulates the
boundary loop (minimum-weight over max-dihedral-then-area), refines the
triangulation to the surrounding edge density and fairs the new
vertices.  A fine stage then renders the patch's mean-curvature colors
to an image, asks an inpainting backend for the plausible colors inside
the hole, and iteratively displaces the new vertices along their
normals until the rendered colors match the inpainted target.  All
movement is confined to the newly created vertices, so every original
vertex coordinate survives repair bit-for-bit.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .chart import (
    PatchChart,
    extract_patch,
    parametrize,
    rasterize,
    rasterize_mask,
    sample_image_at_vertices,
)
from .features import color_to_curvature, mean_curvature
from .inpaint import BackendError
from .mesh import (
    BoundaryLoop,
    MeshTopologyError,
    TriMesh,
    boundary_loops,
    normalize,
    validate,
    vertex_graph_distances,
)

logger = logging.getLogger(__name__)


@dataclass
class DeformConfig:
    """Knobs of the fine deformation stage."""

    color_threshold: float = 30.0
    step_size: float = 0.25
    max_iters: int = 50
    converge_ratio: float = 0.02
    smoothing_rounds: int = 10

    def validate(self) -> None:
        if not 0 < self.color_threshold < 255:
            raise ValueError("color_threshold must be in (0, 255)")
        for name in ("step_size", "converge_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 0:  # 0 disables the fine stage
            raise ValueError("max_iters must be >= 0")
        if self.smoothing_rounds < 0:
            raise ValueError("smoothing_rounds must be >= 0")


@dataclass
class CoarseFill:
    """Result of closing one hole with new geometry only."""

    mesh: TriMesh
    new_vertices: np.ndarray  # vertex ids added to the mesh
    new_faces: np.ndarray  # face ids added to the mesh
    hole_loop: BoundaryLoop
    warnings: list = field(default_factory=list)


@dataclass
class DeformationState:
    """Per-hole bookkeeping carried across deformation iterations.

    ``roi`` and ``control_points`` hold parent-mesh vertex ids; the
    curvature normalization window, displacement scale and probe sign
    are frozen when the state is created so every iteration compares
    colors in the same frame.
    """

    roi: np.ndarray
    control_points: np.ndarray
    residual: float
    iteration: int
    window: tuple
    mean_edge: float
    sign: Optional[float] = None
    entry_residual: float = float("inf")


# ----------------------------------------------------------------------
# coarse stage


def _angle_between(n1: np.ndarray, n2: np.ndarray) -> float:
    c = float(np.dot(n1, n2))
    return math.acos(min(1.0, max(-1.0, c)))


def _tri_geometry(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """(unit normal, area); degenerate triangles get a zero normal."""
    cr = np.cross(b - a, c - a)
    nrm = float(np.linalg.norm(cr))
    if nrm < 1e-300:
        return np.zeros(3), 0.0
    return cr / nrm, 0.5 * nrm


def _loop_self_intersects(points: np.ndarray) -> bool:
    """Crude proximity test between non-adjacent loop segments."""
    n = len(points)
    if n < 4:
        return False
    starts = points
    ends = np.roll(points, -1, axis=0)
    mids = 0.5 * (starts + ends)
    lens = np.linalg.norm(ends - starts, axis=1)
    tol = 1e-9 * max(float(np.ptp(points, axis=0).max()), 1.0)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent around the wrap
            # cheap reject on midpoint distance, then refine
            if np.linalg.norm(mids[i] - mids[j]) > 0.5 * (lens[i] + lens[j]):
                continue
            if _segment_distance(starts[i], ends[i], starts[j], ends[j]) < tol:
                return True
    return False


def _segment_distance(p1, p2, q1, q2) -> float:
    """Minimum distance between two 3D segments."""
    u = p2 - p1
    v = q2 - q1
    w = p1 - q1
    a, b, c = np.dot(u, u), np.dot(u, v), np.dot(v, v)
    d, e = np.dot(u, w), np.dot(v, w)
    denom = a * c - b * b
    if denom > 1e-300:
        s = (b * e - c * d) / denom
        t = (a * e - b * d) / denom
    else:
        s, t = 0.0, e / c if c > 1e-300 else 0.0
    s = min(1.0, max(0.0, s))
    t = min(1.0, max(0.0, t))
    # re-clamp the other parameter after clamping the first
    if c > 1e-300:
        t = min(1.0, max(0.0, (b * s + e) / c))
    if a > 1e-300:
        s = min(1.0, max(0.0, (b * t - d) / a))
    return float(np.linalg.norm((p1 + s * u) - (q1 + t * v)))


def _min_weight_triangulation(mesh: TriMesh, loop: BoundaryLoop):
    """Liepa-style fill of the loop polygon.

    Dynamic program over polygon spans minimizing (max dihedral angle,
    total area) lexicographically.  Dihedrals are measured both between
    candidate triangles and against the existing faces bordering the
    rim, so the fill meets the surrounding surface as smoothly as the
    loop allows.  Chords that coincide with an edge of the surrounding
    mesh are never used (they would leave that edge with more than two
    faces); if a pinched rim blocks every triangulation, the polygon is
    closed with a fan around its centroid instead.

    Returns
    -------
    (faces, extra_points)
        Faces wound opposite to the loop direction, matching the
        orientation of the surrounding mesh, and the coordinates of any
        vertices the fill introduces (referenced by ids starting at
        ``mesh.n_vertices``).
    """
    ids = loop.vertices
    n = len(ids)
    pts = mesh.vertices[ids]
    if n == 3:
        return [[int(ids[2]), int(ids[1]), int(ids[0])]], []

    # normal of the existing face on the far side of each rim edge
    edge_to_face = {}
    for fi, f in enumerate(mesh.faces):
        for k in range(3):
            a, b = int(f[k]), int(f[(k + 1) % 3])
            edge_to_face.setdefault((min(a, b), max(a, b)), []).append(fi)
    rim_normal = []
    for k in range(n):
        a, b = int(ids[k]), int(ids[(k + 1) % n])
        faces = edge_to_face[(min(a, b), max(a, b))]
        rim_normal.append(mesh.face_normals[faces[0]])

    # chords that already exist as mesh edges are off limits
    forbidden = set()
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # the closing rim edge, not a chord
            a, b = int(ids[i]), int(ids[j])
            if (min(a, b), max(a, b)) in edge_to_face:
                forbidden.add((i, j))

    INF = (math.inf, math.inf)
    weight = [[INF] * n for _ in range(n)]
    split = [[-1] * n for _ in range(n)]
    normal = [[None] * n for _ in range(n)]
    for i in range(n - 1):
        weight[i][i + 1] = (0.0, 0.0)

    def side_normal(i, j):
        # normal of whatever lies across span edge (i, j)
        if j == i + 1:
            return rim_normal[i]
        return normal[i][j]

    for span in range(2, n):
        for i in range(n - span):
            j = i + span
            if (i, j) in forbidden:
                continue
            best = INF
            best_m = -1
            best_n = None
            for m in range(i + 1, j):
                w_left = weight[i][m]
                w_right = weight[m][j]
                if math.isinf(w_left[0]) or math.isinf(w_right[0]):
                    continue
                tri_n, tri_area = _tri_geometry(pts[i], pts[m], pts[j])
                if tri_area <= 0.0:
                    ang = math.pi
                else:
                    ang = max(
                        _angle_between(tri_n, side_normal(i, m)),
                        _angle_between(tri_n, side_normal(m, j)),
                    )
                    if i == 0 and j == n - 1:
                        ang = max(ang, _angle_between(tri_n, rim_normal[n - 1]))
                cand = (
                    max(w_left[0], w_right[0], ang),
                    w_left[1] + w_right[1] + tri_area,
                )
                if cand < best:
                    best = cand
                    best_m = m
                    best_n = tri_n
            weight[i][j] = best
            split[i][j] = best_m
            normal[i][j] = best_n

    if math.isinf(weight[0][n - 1][0]):
        # every triangulation needs a blocked chord: close with a
        # centroid fan, whose new edges cannot collide with anything
        logger.warning("pinched hole rim; falling back to a centroid fan")
        cid = mesh.n_vertices
        faces = [
            [int(ids[(k + 1) % n]), int(ids[k]), cid] for k in range(n)
        ]
        return faces, [pts.mean(axis=0)]

    faces = []

    def emit(i, j):
        if j - i < 2:
            return
        m = split[i][j]
        if m < 0:
            raise MeshTopologyError("hole boundary is fully degenerate")
        faces.append([int(ids[j]), int(ids[m]), int(ids[i])])
        emit(i, m)
        emit(m, j)

    emit(0, n - 1)
    return faces, []


def _split_long_edges(vertices: list, new_faces: list, max_len: float):
    """Midpoint-split interior edges of the fill longer than max_len.

    Only edges shared by two new faces are split (rim edges belong to
    the surrounding mesh and stay untouched).  Longest edge first;
    repeats until every interior edge fits.  Returns ids of the
    vertices created.
    """
    added = []
    guard = 0
    while True:
        guard += 1
        if guard > 10000:
            raise RuntimeError("edge refinement failed to terminate")
        edge_faces = {}
        for k, f in enumerate(new_faces):
            for t in range(3):
                a, b = f[t], f[(t + 1) % 3]
                edge_faces.setdefault((min(a, b), max(a, b)), []).append(k)
        candidate = None
        candidate_len = max_len
        for (a, b), fs in edge_faces.items():
            if len(fs) != 2:
                continue
            length = float(np.linalg.norm(vertices[a] - vertices[b]))
            if length > candidate_len or (
                length == candidate_len and candidate is not None and (a, b) < candidate
            ):
                candidate = (a, b)
                candidate_len = length
        if candidate is None:
            return added
        a, b = candidate
        mid = 0.5 * (vertices[a] + vertices[b])
        w = len(vertices)
        vertices.append(mid)
        added.append(w)
        for k in sorted(edge_faces[candidate], reverse=True):
            fa, fb, fc = new_faces[k]
            corners = [fa, fb, fc]
            # rotate so the split edge is (corners[0], corners[1])
            while {corners[0], corners[1]} != {a, b}:
                corners = corners[1:] + corners[:1]
            p, q, o = corners
            new_faces[k] = [p, w, o]
            new_faces.append([w, q, o])


def _min_corner_angle(a, b, c) -> float:
    e = [b - a, c - b, a - c]
    lens = [np.linalg.norm(x) for x in e]
    if min(lens) < 1e-300:
        return 0.0
    angles = []
    for k in range(3):
        u = -e[k - 1] / lens[k - 1]
        v = e[k] / lens[k]
        angles.append(math.acos(min(1.0, max(-1.0, float(np.dot(u, v))))))
    return min(angles)


def _flip_new_edges(vertices: list, new_faces: list, blocked_edges: set) -> None:
    """Lawson flips among edges interior to the fill.

    Flipping an edge shared by two new faces when it raises the minimum
    corner angle of the pair removes the slivers that midpoint splits
    of a fan triangulation leave behind.  Edges already present in the
    surrounding mesh are never created.
    """
    budget = 20 * max(len(new_faces), 1)
    while budget > 0:
        edge_faces = {}
        for k, f in enumerate(new_faces):
            for t in range(3):
                a, b = f[t], f[(t + 1) % 3]
                edge_faces.setdefault((min(a, b), max(a, b)), []).append(k)
        current_edges = set(edge_faces)
        flipped = False
        for (a, b), fs in sorted(edge_faces.items()):
            if len(fs) != 2:
                continue
            k1, k2 = fs
            f1, f2 = new_faces[k1], new_faces[k2]
            # orient labels so f1 holds the directed edge a -> b
            if not _has_directed(f1, a, b):
                a, b = b, a
            c = next(v for v in f1 if v not in (a, b))
            d = next(v for v in f2 if v not in (a, b))
            if c == d:
                continue
            key = (min(c, d), max(c, d))
            if key in current_edges or key in blocked_edges:
                continue
            pa, pb, pc, pd = (vertices[i] for i in (a, b, c, d))
            before = min(_min_corner_angle(pa, pb, pc), _min_corner_angle(pb, pa, pd))
            after = min(_min_corner_angle(pa, pd, pc), _min_corner_angle(pd, pb, pc))
            if after <= before + 1e-12:
                continue
            new_faces[k1] = [a, d, c]
            new_faces[k2] = [d, b, c]
            flipped = True
            budget -= 1
            break  # adjacency is stale; rebuild and rescan
        if not flipped:
            return


def _has_directed(face, a, b) -> bool:
    for t in range(3):
        if face[t] == a and face[(t + 1) % 3] == b:
            return True
    return False


def _cotan_laplacian(mesh: TriMesh) -> scipy.sparse.csr_matrix:
    """Clamped-positive cotangent Laplacian (zero row sums)."""
    v = mesh.vertices
    f = mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        i = f[:, k]
        j = f[:, (k + 1) % 3]
        o = f[:, (k + 2) % 3]
        u = v[i] - v[o]
        w = v[j] - v[o]
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        cot = np.einsum("ij,ij->i", u, w) / np.maximum(cross, 1e-300)
        cot = 0.5 * np.maximum(cot, 1e-8)
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([cot, cot])
    weights = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    degree = np.asarray(weights.sum(axis=1)).ravel()
    return scipy.sparse.diags(degree) - weights


def _fair_new_vertices(mesh: TriMesh, new_ids: np.ndarray) -> TriMesh:
    """Place the new vertices by solving a weighted bi-Laplacian.

    Boundary data comes from the loop rim and the ring of original
    vertices behind it, so the fill meets the surrounding surface with
    matching slope instead of creasing along the rim.  Cotangent
    weights with a vertex-area mass make the operator geometry-aware;
    the solve runs twice, refreshing the weights once, since they
    depend on the positions being solved for.  Zero row sums preserve
    affine functions: a hole in a plane stays exactly in the plane.
    """
    if len(new_ids) == 0:
        return mesh
    n = mesh.n_vertices
    free = np.zeros(n, dtype=bool)
    free[new_ids] = True
    fixed = ~free

    out = mesh
    for _ in range(2):
        lap = _cotan_laplacian(out)
        areas = np.zeros(n)
        thirds = np.repeat(out.face_areas / 3.0, 3)
        np.add.at(areas, out.faces.ravel(), thirds)
        areas = np.maximum(areas, 1e-12 * max(float(areas.mean()), 1e-300))
        bilap = (lap @ scipy.sparse.diags(1.0 / areas) @ lap).tocsr()

        a_ii = bilap[free][:, free].tocsc()
        a_ib = bilap[free][:, fixed]
        rhs = -a_ib @ out.vertices[fixed]
        solved = scipy.sparse.linalg.splu(a_ii).solve(rhs)
        if not np.isfinite(solved).all():
            raise RuntimeError("fairing solve produced non-finite coordinates")
        verts = out.vertices.copy()
        verts[free] = solved
        out = out.with_vertices(verts)
    return out


def coarse_fill(mesh: TriMesh, loop: BoundaryLoop) -> CoarseFill:
    """Close one boundary loop with new faces (and vertices) only.

    Pre-existing vertices and faces are never modified, moved or
    removed; the returned mesh extends the input arrays.  A loop whose
    geometry self-intersects is still filled, with a warning recorded
    in the result.

    Parameters
    ----------
    mesh : TriMesh
    loop : BoundaryLoop
        Must consist of current boundary edges of ``mesh``.

    Returns
    -------
    CoarseFill
        Filled mesh plus the ids of everything added.
    """
    ids = loop.vertices
    boundary = mesh.is_boundary_vertex()
    if not boundary[ids].all():
        raise MeshTopologyError("loop vertices are not on the mesh boundary")

    warnings = []
    if _loop_self_intersects(mesh.vertices[ids]):
        warnings.append("hole boundary self-intersects; fill may fold")
        logger.warning("hole boundary self-intersects; filling anyway")

    fan, extra_points = _min_weight_triangulation(mesh, loop)

    rim_lengths = loop.edge_lengths(mesh)
    max_len = math.sqrt(2.0) * float(rim_lengths.mean())
    vertices = list(mesh.vertices) + [np.asarray(p) for p in extra_points]
    new_faces = [list(f) for f in fan]
    existing_edges = {tuple(e) for e in np.sort(mesh.edges, axis=1).tolist()}
    for _ in range(3):
        n_before = len(vertices)
        _split_long_edges(vertices, new_faces, max_len)
        _flip_new_edges(vertices, new_faces, existing_edges)
        if len(vertices) == n_before:
            break

    filled = TriMesh(np.asarray(vertices), np.vstack([mesh.faces, np.asarray(new_faces)]))
    if filled.dropped_faces:
        raise MeshTopologyError("hole fill produced degenerate faces")
    new_vertex_ids = np.arange(mesh.n_vertices, filled.n_vertices)
    new_face_ids = np.arange(mesh.n_faces, filled.n_faces)
    filled = _fair_new_vertices(filled, new_vertex_ids)
    return CoarseFill(filled, new_vertex_ids, new_face_ids, loop, warnings)


# ----------------------------------------------------------------------
# fine stage


def _unit_window(values: np.ndarray, window: tuple) -> np.ndarray:
    lo, hi = window
    if hi - lo < 1e-300:
        return np.full(values.shape, 0.5)
    return (np.clip(values, lo, hi) - lo) / (hi - lo)


def _current_raster(mesh: TriMesh, chart: PatchChart, window: tuple) -> np.ndarray:
    """Render the patch's curvature colors at the current geometry.

    The UV layout and the curvature normalization window stay frozen;
    only vertex positions (hence curvature values) refresh.
    """
    patch = chart.patch
    sub = TriMesh(mesh.vertices[patch.parent_vertices], chart.submesh.faces)
    values = mean_curvature(sub)
    return rasterize(chart, _unit_window(values, window)), sub


def detect_control_points(
    chart: PatchChart,
    current: np.ndarray,
    target: np.ndarray,
    roi,
    threshold: float = 30.0,
) -> np.ndarray:
    """ROI vertices whose rendered color is far from the target color.

    A vertex qualifies when the absolute difference in *any* channel,
    between its bilinear samples of the two images, strictly exceeds
    ``threshold``.  (A difference of exactly the threshold does not
    qualify.)  Vertex ids are parent-mesh ids; the result is sorted.
    """
    if current.shape != target.shape:
        raise ValueError("current and target images differ in shape")
    roi = np.asarray(sorted(set(map(int, np.asarray(roi).ravel()))), dtype=np.int64)
    if roi.size == 0:
        return roi
    lookup = {int(p): i for i, p in enumerate(chart.patch.parent_vertices)}
    local = np.array([lookup[v] for v in roi], dtype=np.int64)
    cur = sample_image_at_vertices(chart, current, local)
    tgt = sample_image_at_vertices(chart, target, local)
    diff = np.abs(cur - tgt).max(axis=1)
    return roi[diff > threshold]


def _color_residual(chart, current, target, local_ids) -> float:
    """Mean max-channel color distance over the given patch vertices."""
    if len(local_ids) == 0:
        return 0.0
    cur = sample_image_at_vertices(chart, current, local_ids)
    tgt = sample_image_at_vertices(chart, target, local_ids)
    return float(np.abs(cur - tgt).max(axis=1).mean())


def _propagate_displacement(
    sub: TriMesh, roi_local: np.ndarray, control_local: np.ndarray,
    control_delta: np.ndarray, smoothing_passes: int = 3,
) -> np.ndarray:
    """Spread signed control displacements over the ROI.

    Non-control vertices take an inverse-square graph-distance blend of
    the control values, then a few pinned Laplacian passes smooth the
    field (vertices outside the ROI act as zero anchors).  Approximates
    an elastic spread: smooth, control-interpolating, ROI-confined.
    """
    n = sub.n_vertices
    weights = np.zeros((len(roi_local), len(control_local)))
    for k, c in enumerate(control_local):
        dist = vertex_graph_distances(sub, [int(c)]).astype(np.float64)
        d = dist[roi_local]
        w = np.where(d >= 0, 1.0 / (1.0 + d) ** 2, 0.0)
        weights[:, k] = w
    total = weights.sum(axis=1)
    delta = np.zeros(len(roi_local))
    ok = total > 0
    delta[ok] = (weights @ control_delta)[ok] / total[ok]

    field = np.zeros(n)
    field[roi_local] = delta
    field[control_local] = control_delta

    pinned = np.zeros(n, dtype=bool)
    pinned[control_local] = True
    in_roi = np.zeros(n, dtype=bool)
    in_roi[roi_local] = True

    edges = sub.edges
    ones = np.ones(len(edges))
    adj = scipy.sparse.coo_matrix(
        (np.concatenate([ones, ones]),
         (np.concatenate([edges[:, 0], edges[:, 1]]),
          np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n, n),
    ).tocsr()
    degree = np.maximum(np.asarray(adj.sum(axis=1)).ravel(), 1.0)
    movable = in_roi & ~pinned
    for _ in range(smoothing_passes):
        averaged = (adj @ field) / degree
        field[movable] = averaged[movable]
        field[~in_roi] = 0.0
    return field[roi_local]


def deform_step(
    mesh: TriMesh,
    chart: PatchChart,
    target: np.ndarray,
    state: DeformationState,
    cfg: DeformConfig,
):
    """One normal-direction deformation iteration.

    Re-renders the patch at the current geometry, finds the control
    points whose colors still disagree with the target, and moves every
    ROI vertex along its normal: control points by an amount set by the
    decoded curvature difference, the rest by elastic propagation.
    Vertices outside the ROI never move.  On the first iteration the
    global displacement sign is picked by probing both directions and
    keeping whichever lowers the control-point residual.

    Returns
    -------
    (TriMesh, DeformationState)
        Updated mesh and state; ``state.residual`` is measured after
        the move, ``state.entry_residual`` before it.
    """
    cfg.validate()
    patch = chart.patch
    lookup = {int(p): i for i, p in enumerate(patch.parent_vertices)}
    roi_parent = np.asarray(state.roi, dtype=np.int64)
    roi_local = np.array([lookup[int(v)] for v in roi_parent], dtype=np.int64)

    current, sub = _current_raster(mesh, chart, state.window)
    controls_parent = detect_control_points(
        chart, current, target, roi_parent, cfg.color_threshold
    )
    control_local = np.array(
        [lookup[int(v)] for v in controls_parent], dtype=np.int64
    )
    entry = _color_residual(chart, current, target, control_local)

    next_iter = state.iteration + 1
    if controls_parent.size == 0:
        return mesh, replace(
            state,
            control_points=controls_parent,
            residual=0.0,
            entry_residual=0.0,
            iteration=next_iter,
        )

    cur_t = color_to_curvature(sample_image_at_vertices(chart, current, control_local))
    tgt_t = color_to_curvature(sample_image_at_vertices(chart, target, control_local))
    magnitude = cfg.step_size * state.mean_edge * (tgt_t - cur_t)

    normals = sub.vertex_normals
    usable = np.linalg.norm(normals[roi_local], axis=1) > 0.5
    if not usable.all():
        logger.debug("skipping %d ROI vertices with degenerate normals",
                     int((~usable).sum()))

    def displaced(sign: float) -> TriMesh:
        delta = _propagate_displacement(sub, roi_local, control_local,
                                        sign * magnitude)
        verts = mesh.vertices.copy()
        move = roi_local[usable]
        verts[roi_parent[usable]] = (
            sub.vertices[move] + delta[usable, None] * normals[move]
        )
        return mesh.with_vertices(verts)

    sign = state.sign
    if sign is None:
        candidates = {}
        for s in (1.0, -1.0):
            moved = displaced(s)
            raster, _ = _current_raster(moved, chart, state.window)
            candidates[s] = (_color_residual(chart, raster, target, control_local),
                             moved)
        sign = 1.0 if candidates[1.0][0] <= candidates[-1.0][0] else -1.0
        residual, new_mesh = candidates[sign]
    else:
        new_mesh = displaced(sign)
        raster, _ = _current_raster(new_mesh, chart, state.window)
        residual = _color_residual(chart, raster, target, control_local)

    return new_mesh, replace(
        state,
        control_points=controls_parent,
        residual=residual,
        entry_residual=entry,
        iteration=next_iter,
        sign=sign,
    )


def smooth_boundary(mesh: TriMesh, roi, rounds: int = 10) -> TriMesh:
    """Smooth the seam between new and old geometry.

    Runs ``rounds`` passes of edge-length-weighted Laplacian averaging
    over the band of ROI vertices within two hops of the ROI rim.  The
    rim itself and everything outside the ROI stay bit-identical, so
    smoothing cannot disturb the original surface.
    """
    roi = np.asarray(sorted(set(map(int, np.asarray(roi).ravel()))), dtype=np.int64)
    if roi.size == 0:
        raise ValueError("roi is empty")
    if rounds == 0:
        return mesh
    in_roi = np.zeros(mesh.n_vertices, dtype=bool)
    in_roi[roi] = True
    neighbors = mesh.vertex_neighbors
    rim = sorted(
        {
            int(nb)
            for v in roi
            for nb in neighbors[v]
            if not in_roi[nb]
        }
    )
    if not rim:
        return mesh
    dist = vertex_graph_distances(mesh, rim, max_depth=2)
    band = np.nonzero(in_roi & (dist >= 0) & (dist <= 2))[0]
    if band.size == 0:
        return mesh

    relax = 0.2  # gentle: hides the seam without shrinking the fill
    verts = mesh.vertices.copy()
    for _ in range(rounds):
        updated = verts.copy()
        for v in band:
            nbr = neighbors[v]
            d = np.linalg.norm(verts[nbr] - verts[v], axis=1)
            w = 1.0 / np.maximum(d, 1e-12)
            centroid = (w[:, None] * verts[nbr]).sum(axis=0) / w.sum()
            updated[v] = (1.0 - relax) * verts[v] + relax * centroid
        verts = updated
    return mesh.with_vertices(verts)


def repair_hole(
    mesh: TriMesh,
    loop: BoundaryLoop,
    backend,
    cfg: Optional[DeformConfig] = None,
    rings: int = 8,
    resolution: int = 512,
):
    """Close one hole: coarse fill, then image-guided deformation.

    On a backend failure the coarse fill (plus boundary smoothing) is
    kept and the report entry carries the error text; any other stage
    error propagates.

    Returns
    -------
    (TriMesh, dict)
        Repaired mesh and the per-hole report entry.
    """
    cfg = cfg or DeformConfig()
    cfg.validate()
    started = time.perf_counter()

    fill = coarse_fill(mesh, loop)
    work = fill.mesh
    roi = fill.new_vertices

    patch = extract_patch(work, loop, rings=rings)
    covered = set(map(int, patch.parent_faces))
    if not all(int(f) in covered for f in fill.new_faces):
        raise MeshTopologyError("chart does not cover the filled region")

    values = mean_curvature(patch.submesh)
    window = tuple(np.percentile(values, [2.0, 98.0]))
    chart = parametrize(patch, resolution=resolution)

    face_lookup = {int(p): i for i, p in enumerate(patch.parent_faces)}
    local_new_faces = [face_lookup[int(f)] for f in fill.new_faces]
    current = rasterize(chart, _unit_window(values, window))
    mask = rasterize_mask(chart, local_new_faces)

    entry = {
        "loop_length": int(len(loop)),
        "new_vertices": int(len(fill.new_vertices)),
        "iterations": 0,
        "residual_initial": 0.0,
        "residual_final": 0.0,
        "seconds": 0.0,
        "backend": getattr(backend, "backend_id", backend.__class__.__name__),
    }
    if fill.warnings:
        entry["warnings"] = list(fill.warnings)

    try:
        target = backend.inpaint(current, mask)
    except BackendError as exc:
        logger.error("inpainting backend failed: %s", exc)
        entry["error"] = str(exc)
        work = smooth_boundary(work, roi, cfg.smoothing_rounds)
        entry["seconds"] = time.perf_counter() - started
        return work, entry

    state = DeformationState(
        roi=roi,
        control_points=np.empty(0, dtype=np.int64),
        residual=float("inf"),
        iteration=0,
        window=window,
        mean_edge=float(patch.submesh.mean_edge_length),
    )

    residual_initial = 0.0
    for k in range(cfg.max_iters):
        new_mesh, new_state = deform_step(work, chart, target, state, cfg)
        if k == 0:
            residual_initial = new_state.entry_residual
        if new_state.control_points.size == 0:
            state = new_state
            break
        if new_state.residual > new_state.entry_residual:
            # the move made matters worse: keep the pre-move surface
            state = replace(new_state, residual=new_state.entry_residual,
                            iteration=state.iteration)
            break
        work, state = new_mesh, new_state
        entry["iterations"] = state.iteration
        drop = (state.entry_residual - state.residual) / max(
            state.entry_residual, 1e-300
        )
        if drop < cfg.converge_ratio:
            break

    entry["residual_initial"] = float(residual_initial)
    entry["residual_final"] = float(min(state.residual, state.entry_residual))

    work = smooth_boundary(work, roi, cfg.smoothing_rounds)
    entry["seconds"] = time.perf_counter() - started
    return work, entry


def repair_mesh(
    mesh: TriMesh,
    backend,
    cfg: Optional[DeformConfig] = None,
    rings: int = 8,
    resolution: int = 512,
):
    """Repair every hole of a mesh, longest boundary loop first.

    The mesh is normalized to the unit box for the repair and mapped
    back afterwards; original vertices bypass the round trip entirely
    and are emitted bit-identical.  Per-hole failures are recorded in
    the report while the remaining holes are still attempted.

    Returns
    -------
    (TriMesh, list of dict)
        Watertight mesh (when every hole succeeded) and the per-hole
        report entries.
    """
    report = validate(mesh)
    if not report.manifold:
        raise MeshTopologyError("repair requires a manifold mesh")
    loops = boundary_loops(mesh)
    if not loops:
        return mesh, []

    work, transform = normalize(mesh)
    entries = []
    for loop in loops:
        try:
            work, entry = repair_hole(
                work, loop, backend, cfg=cfg, rings=rings, resolution=resolution
            )
        except (MeshTopologyError, ValueError, RuntimeError) as exc:
            logger.error("hole repair failed: %s", exc)
            entry = {
                "loop_length": int(len(loop)),
                "new_vertices": 0,
                "iterations": 0,
                "residual_initial": 0.0,
                "residual_final": 0.0,
                "seconds": 0.0,
                "backend": getattr(backend, "backend_id", backend.__class__.__name__),
                "error": str(exc),
            }
        entries.append(entry)

    out_vertices = transform.invert(work.vertices)
    out_vertices[: mesh.n_vertices] = mesh.vertices
    return TriMesh(out_vertices, work.faces), entries
