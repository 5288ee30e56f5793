"""Vertex sampling, hole synthesis, segmentation, curvature and color coding."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .mesh import MeshTopologyError, TriMesh, boundary_loops, validate

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


# ----------------------------------------------------------------------
# farthest point sampling


def farthest_point_sample(mesh: TriMesh, k: int, rng_seed: int = 0) -> np.ndarray:
    """Greedy maximin vertex selection over squared Euclidean distance.

    The first vertex is drawn uniformly from ``rng_seed``; each following
    pick maximizes the minimum squared distance to everything selected so
    far (ties go to the lowest vertex id).

    Returns a (k,) int array of vertex ids.
    """
    n = mesh.n_vertices
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"cannot sample {k} points from {n} vertices")
    rng = np.random.default_rng(rng_seed)
    first = int(rng.integers(n))
    chosen = [first]
    v = mesh.vertices
    min_d2 = np.sum((v - v[first]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        d2 = np.sum((v - v[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return np.asarray(chosen, dtype=np.int64)


# ----------------------------------------------------------------------
# hole synthesis


@dataclass(frozen=True)
class HoleSpec:
    """Record of one synthesized hole, indexed against the input mesh."""

    seed_vertex: int
    removed_vertices: np.ndarray
    removed_faces: np.ndarray

    def to_dict(self) -> dict:
        return {
            "seed_vertex": int(self.seed_vertex),
            "removed_vertices": [int(v) for v in self.removed_vertices],
            "removed_faces": [int(f) for f in self.removed_faces],
        }


def synthesize_holes(mesh: TriMesh, n_holes: int = 5, rng_seed: int = 0):
    """Punch ``n_holes`` disjoint holes into a watertight mesh.

    Hole seeds come from farthest-point sampling.  Each hole grows
    breadth-first from its seed until a per-hole target drawn uniformly
    from (0, 0.10 * V / n_holes] is reached; growth halts early when the
    frontier would come within two hops of another hole.  A hole consists
    of the grown vertex set plus every face touching it.

    Returns
    -------
    (TriMesh, list[HoleSpec])
        The damaged mesh (unreferenced vertices compacted away) and one
        spec per hole with ids in the *input* mesh indexing.

    Raises
    ------
    MeshTopologyError
        If the input is not a closed manifold, or is too small to host
        ``n_holes`` disjoint holes.
    """
    if n_holes < 1:
        raise ValueError("n_holes must be >= 1")
    report = validate(mesh)
    if not (report.manifold and report.watertight):
        raise MeshTopologyError("hole synthesis needs a watertight manifold mesh")
    rng = np.random.default_rng(rng_seed)
    seeds = farthest_point_sample(mesh, n_holes, rng_seed=rng_seed)
    n = mesh.n_vertices
    cap = 0.10 * n / n_holes
    targets = [max(1, int(np.floor(rng.uniform() * cap))) for _ in range(n_holes)]

    claim = np.full(n, -1, dtype=np.int64)  # hole id per removed vertex
    nbr = mesh.vertex_neighbors

    def conflicts(v: int, hole: int) -> bool:
        # any vertex within two hops already claimed by a different hole?
        if claim[v] >= 0 and claim[v] != hole:
            return True
        for w in nbr[v]:
            if claim[w] >= 0 and claim[w] != hole:
                return True
            for u in nbr[w]:
                if claim[u] >= 0 and claim[u] != hole:
                    return True
        return False

    regions: list[list[int]] = []
    for hole, (seed, target) in enumerate(zip(seeds, targets)):
        seed = int(seed)
        if conflicts(seed, hole):
            raise MeshTopologyError(
                f"mesh too small to host {n_holes} disjoint holes"
            )
        region = [seed]
        claim[seed] = hole
        frontier = [seed]
        halted = False
        while len(region) < target and frontier and not halted:
            layer = sorted(
                {int(w) for v in frontier for w in nbr[v] if claim[w] < 0}
            )
            if not layer:
                break
            accepted = []
            for w in layer:
                if len(region) >= target:
                    break
                if conflicts(w, hole):
                    halted = True
                    break
                region.append(w)
                claim[w] = hole
                accepted.append(w)
            frontier = accepted
        regions.append(region)

    _absorb_pinches(mesh, claim, regions)
    total_removed = sum(len(r) for r in regions)
    if total_removed >= 0.10 * n and n > 10 * n_holes:
        raise MeshTopologyError("hole synthesis exceeded the 10% removal budget")

    removed_mask = claim >= 0
    face_touches = removed_mask[mesh.faces].any(axis=1)
    specs = []
    for hole, region in enumerate(regions):
        face_ids = np.nonzero(
            np.isin(mesh.faces, np.asarray(region)).any(axis=1)
        )[0]
        specs.append(
            HoleSpec(
                seed_vertex=int(seeds[hole]),
                removed_vertices=np.asarray(sorted(region), dtype=np.int64),
                removed_faces=face_ids.astype(np.int64),
            )
        )

    kept_faces = mesh.faces[~face_touches]
    used = np.unique(kept_faces)
    remap = np.full(n, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    damaged = TriMesh(mesh.vertices[used], remap[kept_faces])

    loops = boundary_loops(damaged)
    if len(loops) != n_holes:
        raise MeshTopologyError(
            f"mesh too small to host {n_holes} disjoint holes "
            f"(got {len(loops)} boundary loops)"
        )
    return damaged, specs


def _absorb_pinches(mesh: TriMesh, claim: np.ndarray, regions) -> None:
    """Grow regions over rim vertices whose kept-face star would pinch.

    After face removal every remaining vertex star must stay a single
    fan; a rim vertex whose kept faces split into several fans is folded
    into the adjacent hole instead.
    """
    for _ in range(20):
        removed_mask = claim >= 0
        face_kept = ~removed_mask[mesh.faces].any(axis=1)
        bad = []
        for v in range(mesh.n_vertices):
            if removed_mask[v]:
                continue
            if not (removed_mask[mesh.vertex_neighbors[v]].any()):
                continue
            incident = [f for f in mesh.vertex_faces[v] if face_kept[f]]
            if not incident:
                bad.append(v)  # stranded: every face at v removed
                continue
            if _fan_components(mesh, v, incident) != 1:
                bad.append(v)
        if not bad:
            return
        for v in bad:
            owners = sorted(
                int(claim[w]) for w in mesh.vertex_neighbors[v] if claim[w] >= 0
            )
            hole = owners[0]
            claim[v] = hole
            regions[hole].append(int(v))
    raise MeshTopologyError("hole synthesis failed to reach a manifold result")


def _fan_components(mesh: TriMesh, v: int, incident) -> int:
    wings = []
    for fi in incident:
        others = [int(x) for x in mesh.faces[fi] if x != v]
        wings.append(tuple(others))
    parent = list(range(len(wings)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[int, int] = {}
    for i, (a, b) in enumerate(wings):
        for w in (a, b):
            if w in owner:
                parent[find(i)] = find(owner[w])
            else:
                owner[w] = i
    return len({find(i) for i in range(len(wings))})


# ----------------------------------------------------------------------
# segmentation


def segment_by_seeds(mesh: TriMesh, seeds) -> np.ndarray:
    """Graph-distance Voronoi labels grown from seed vertices.

    Every vertex gets the index (position in ``seeds``) of its nearest
    seed by breadth-first hop count; ties break to the lower index.

    Raises
    ------
    MeshTopologyError
        If some vertex is unreachable from every seed.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    n = mesh.n_vertices
    dists = np.full((len(seeds), n), np.iinfo(np.int64).max, dtype=np.int64)
    nbr = mesh.vertex_neighbors
    for i, s in enumerate(seeds):
        dists[i, s] = 0
        frontier = [s]
        depth = 0
        while frontier:
            nxt = []
            for v in frontier:
                for w in nbr[v]:
                    if dists[i, w] > depth + 1:
                        dists[i, w] = depth + 1
                        nxt.append(int(w))
            frontier = nxt
            depth += 1
    if (dists == np.iinfo(np.int64).max).all(axis=0).any():
        raise MeshTopologyError("mesh is disconnected: some vertex reaches no seed")
    return np.argmin(dists, axis=0).astype(np.int64)


# ----------------------------------------------------------------------
# discrete mean curvature


def mean_curvature(mesh: TriMesh) -> np.ndarray:
    """Per-vertex discrete mean curvature.

    H(v) = sign * ||L v|| / 2 with the cotangent Laplacian over mixed
    Voronoi cell areas; the sign is positive where the Laplacian vector
    opposes the outward vertex normal.  Boundary vertices copy the mean
    value of their interior 1-ring neighbors; vertices without any
    triangle get 0 (with a warning).
    """
    v = mesh.vertices
    f = mesh.faces
    n = mesh.n_vertices
    if mesh.n_faces == 0:
        logger.warning("mean_curvature on a mesh without faces: all zeros")
        return np.zeros(n)

    # corner cotangents: cot at corner k weights the opposite edge
    cots = np.empty((len(f), 3))
    areas = mesh.face_areas
    for k in range(3):
        a = v[f[:, k]]
        b = v[f[:, (k + 1) % 3]]
        c = v[f[:, (k + 2) % 3]]
        e1 = b - a
        e2 = c - a
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        cross = np.where(cross < 1e-300, 1e-300, cross)
        cots[:, k] = np.einsum("ij,ij->i", e1, e2) / cross

    rows, cols, vals = [], [], []
    for k in range(3):
        i = f[:, (k + 1) % 3]
        j = f[:, (k + 2) % 3]
        w = cots[:, k]
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    W = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()

    area_mixed = _mixed_voronoi_areas(mesh, cots, areas)
    deg = np.asarray(W.sum(axis=1)).ravel()
    lap = W @ v - deg[:, None] * v  # sum_j w_ij (v_j - v_i)
    safe = np.where(area_mixed > 1e-300, 2.0 * area_mixed, 1.0)
    lap = lap / safe[:, None]

    h = 0.5 * np.linalg.norm(lap, axis=1)
    normals = mesh.vertex_normals
    opposes = np.einsum("ij,ij->i", lap, normals) < 0
    h = np.where(opposes, h, -h)

    boundary = mesh.is_boundary_vertex()
    isolated = np.array([len(ff) == 0 for ff in mesh.vertex_faces])
    if isolated.any():
        logger.warning("%d vertices without faces get curvature 0", isolated.sum())
        h[isolated] = 0.0
    interior = ~boundary & ~isolated
    if boundary.any():
        # copy the mean of interior 1-ring neighbors; rim vertices without
        # interior neighbors inherit from already-assigned rim neighbors in
        # later waves, and 0 if nothing is ever reachable
        known = interior.copy()
        h = np.where(boundary, 0.0, h)
        pending = list(np.nonzero(boundary & ~isolated)[0])
        while pending:
            assigned = []
            values = {}
            for bv in pending:
                ns = [w for w in mesh.vertex_neighbors[bv] if known[w]]
                if ns:
                    values[bv] = float(np.mean(h[ns]))
                    assigned.append(bv)
            if not assigned:
                break
            for bv in assigned:
                h[bv] = values[bv]
                known[bv] = True
            pending = [bv for bv in pending if bv not in values]
    return h


def _mixed_voronoi_areas(mesh: TriMesh, cots: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Meyer-style mixed cell areas: Voronoi areas inside non-obtuse
    triangles, area/2 at the obtuse corner and area/4 elsewhere."""
    v = mesh.vertices
    f = mesh.faces
    n = mesh.n_vertices
    out = np.zeros(n)
    obtuse = cots < 0  # negative cotangent = angle > 90 degrees
    any_obtuse = obtuse.any(axis=1)

    # squared edge lengths opposite each corner
    sq = np.empty_like(cots)
    for k in range(3):
        b = v[f[:, (k + 1) % 3]]
        c = v[f[:, (k + 2) % 3]]
        sq[:, k] = np.sum((b - c) ** 2, axis=1)

    for k in range(3):
        corner = f[:, k]
        # Voronoi contribution at corner k: (|e_kj|^2 cot_j + |e_ki|^2 cot_i)/8
        j = (k + 1) % 3
        i = (k + 2) % 3
        voronoi = (sq[:, j] * cots[:, j] + sq[:, i] * cots[:, i]) / 8.0
        fallback = np.where(obtuse[:, k], areas / 2.0, areas / 4.0)
        contrib = np.where(any_obtuse, fallback, voronoi)
        np.add.at(out, corner, contrib)
    return out


# ----------------------------------------------------------------------
# normalization to [0, 1]


def normalize_curvature(values: np.ndarray, p: float = 0.02) -> np.ndarray:
    """Winsorize at the [p, 1-p] percentiles, then map affinely to [0, 1].

    A constant field maps to all 0.5.
    """
    values = np.asarray(values, dtype=np.float64)
    if not np.isfinite(values).all():
        raise ValueError("curvature values must be finite")
    if not 0.0 <= p < 0.5:
        raise ValueError("p must be in [0, 0.5)")
    lo, hi = np.percentile(values, [100.0 * p, 100.0 * (1.0 - p)])
    if hi - lo < 1e-300:
        return np.full(values.shape, 0.5)
    return (np.clip(values, lo, hi) - lo) / (hi - lo)


# ----------------------------------------------------------------------
# rainbow color coding

# colormap polyline anchors at t = 0, .25, .5, .75, 1
_ANCHORS = np.array(
    [
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ]
)
_T_KNOTS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def curvature_to_color(t) -> np.ndarray:
    """Map normalized values to the rainbow ramp: hue runs 240 deg (blue,
    low) through green to 0 deg (red, high) at full saturation and value.

    Accepts scalars or arrays; returns uint8 with a trailing axis of 3.
    """
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    r = np.interp(t, _T_KNOTS, _ANCHORS[:, 0])
    g = np.interp(t, _T_KNOTS, _ANCHORS[:, 1])
    b = np.interp(t, _T_KNOTS, _ANCHORS[:, 2])
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def color_to_curvature(rgb) -> np.ndarray:
    """Invert the rainbow ramp: nearest point on the colormap polyline.

    Exact (up to 8-bit quantization) for colors on the ramp; off-ramp
    colors project to the closest curve point, ties resolving to the
    lower t.  Returns float values in [0, 1], scalar in scalar out.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError("expected a trailing axis of 3 color channels")
    scalar = arr.ndim == 1
    pts = arr.reshape(-1, 3)
    best_d2 = np.full(len(pts), np.inf)
    best_t = np.zeros(len(pts))
    for k in range(4):
        p0 = _ANCHORS[k]
        seg = _ANCHORS[k + 1] - p0
        denom = float(seg @ seg)
        s = np.clip((pts - p0) @ seg / denom, 0.0, 1.0)
        cand = p0 + s[:, None] * seg
        d2 = np.sum((pts - cand) ** 2, axis=1)
        better = d2 < best_d2 - 1e-12
        best_t = np.where(better, (k + s) / 4.0, best_t)
        best_d2 = np.where(better, d2, best_d2)
    return float(best_t[0]) if scalar else best_t.reshape(arr.shape[:-1])
