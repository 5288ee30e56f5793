"""Indexed triangle meshes: construction, topology queries, normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class MeshTopologyError(ValueError):
    """Raised when mesh connectivity violates an operation's precondition."""


class TriMesh:
    """Immutable indexed triangle mesh.

    Parameters
    ----------
    vertices : (V, 3) array_like of float
        Vertex positions.
    faces : (F, 3) array_like of int
        Vertex indices per triangle, counter-clockwise when seen from
        outside.  Faces that reference fewer than three distinct vertices
        are dropped; the number of dropped faces is kept in
        ``dropped_faces``.

    Notes
    -----
    Vertex and face arrays are frozen after construction.  Adjacency
    structures (edges, vertex neighborhoods, normals) are built lazily on
    first use and cached.
    """

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64, copy=True)
        f = np.array(faces, dtype=np.int64, copy=True)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.size == 0:
            f = np.zeros((0, 3), dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshTopologyError("face references a vertex index out of range")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        self.dropped_faces = int(np.count_nonzero(degenerate))
        if self.dropped_faces:
            logger.warning("dropped %d degenerate face(s)", self.dropped_faces)
            f = f[~degenerate]
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f
        self._cache: dict = {}

    # ------------------------------------------------------------------
    # basic counts

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        """V - E + F."""
        return self.n_vertices - self.n_edges + self.n_faces

    # ------------------------------------------------------------------
    # edges

    def _edge_tables(self):
        if "edge_tables" not in self._cache:
            f = self.faces
            directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            undirected = np.sort(directed, axis=1)
            edges, inverse, counts = np.unique(
                undirected, axis=0, return_inverse=True, return_counts=True
            )
            self._cache["edge_tables"] = (edges, inverse, counts, directed)
        return self._cache["edge_tables"]

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) unique undirected edges, each row sorted ascending."""
        return self._edge_tables()[0]

    @property
    def edge_face_counts(self) -> np.ndarray:
        """Number of incident faces per edge, aligned with ``edges``."""
        return self._edge_tables()[2]

    @property
    def face_edges(self) -> np.ndarray:
        """(F, 3) edge index per face side, aligned with ``edges``.

        Column k holds the edge (face[k], face[(k+1) % 3]).
        """
        if "face_edges" not in self._cache:
            _, inverse, _, _ = self._edge_tables()
            n = self.n_faces
            fe = np.empty((n, 3), dtype=np.int64)
            fe[:, 0] = inverse[0:n]
            fe[:, 1] = inverse[n : 2 * n]
            fe[:, 2] = inverse[2 * n : 3 * n]
            self._cache["face_edges"] = fe
        return self._cache["face_edges"]

    def is_edge_manifold(self) -> bool:
        counts = self.edge_face_counts
        return bool(counts.size == 0 or counts.max() <= 2)

    def first_nonmanifold_edge(self):
        """Return the (a, b) pair of the first edge with > 2 faces, or None."""
        edges, _, counts, _ = self._edge_tables()
        bad = np.nonzero(counts > 2)[0]
        if bad.size == 0:
            return None
        a, b = edges[bad[0]]
        return int(a), int(b)

    @property
    def boundary_edge_mask(self) -> np.ndarray:
        return self.edge_face_counts == 1

    # ------------------------------------------------------------------
    # incidence

    @property
    def vertex_faces(self) -> list:
        """List of (k,) int arrays: face indices incident to each vertex."""
        if "vertex_faces" not in self._cache:
            vf: list = [[] for _ in range(self.n_vertices)]
            for fi, (a, b, c) in enumerate(self.faces):
                vf[a].append(fi)
                vf[b].append(fi)
                vf[c].append(fi)
            self._cache["vertex_faces"] = [np.asarray(x, dtype=np.int64) for x in vf]
        return self._cache["vertex_faces"]

    @property
    def vertex_neighbors(self) -> list:
        """List of sorted (k,) int arrays: vertices sharing an edge."""
        if "vertex_neighbors" not in self._cache:
            nbr: list = [set() for _ in range(self.n_vertices)]
            for a, b in self.edges:
                nbr[a].add(b)
                nbr[b].add(a)
            self._cache["vertex_neighbors"] = [
                np.asarray(sorted(s), dtype=np.int64) for s in nbr
            ]
        return self._cache["vertex_neighbors"]

    @property
    def face_adjacency(self) -> list:
        """List of (k,) int arrays: faces sharing an edge with each face."""
        if "face_adjacency" not in self._cache:
            edge_to_faces: dict = {}
            for fi, fe in enumerate(self.face_edges):
                for e in fe:
                    edge_to_faces.setdefault(int(e), []).append(fi)
            adj: list = [[] for _ in range(self.n_faces)]
            for flist in edge_to_faces.values():
                for fi in flist:
                    for fj in flist:
                        if fi != fj:
                            adj[fi].append(fj)
            self._cache["face_adjacency"] = [
                np.asarray(sorted(set(x)), dtype=np.int64) for x in adj
            ]
        return self._cache["face_adjacency"]

    # ------------------------------------------------------------------
    # geometry

    @property
    def face_cross(self) -> np.ndarray:
        """(F, 3) unnormalized face normals (cross products)."""
        if "face_cross" not in self._cache:
            v = self.vertices
            f = self.faces
            cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            self._cache["face_cross"] = cr
        return self._cache["face_cross"]

    @property
    def face_areas(self) -> np.ndarray:
        if "face_areas" not in self._cache:
            self._cache["face_areas"] = 0.5 * np.linalg.norm(self.face_cross, axis=1)
        return self._cache["face_areas"]

    @property
    def face_normals(self) -> np.ndarray:
        """(F, 3) unit face normals; degenerate faces get zero vectors."""
        if "face_normals" not in self._cache:
            cr = self.face_cross.copy()
            n = np.linalg.norm(cr, axis=1)
            ok = n > 0
            cr[ok] /= n[ok, None]
            cr[~ok] = 0.0
            self._cache["face_normals"] = cr
        return self._cache["face_normals"]

    @property
    def vertex_normals(self) -> np.ndarray:
        """(V, 3) area-weighted unit vertex normals.

        Vertices with no incident area (isolated or fully degenerate
        stars) get a zero vector instead of a unit one.
        """
        if "vertex_normals" not in self._cache:
            acc = np.zeros_like(self.vertices)
            cr = self.face_cross  # magnitude 2*area: area weighting for free
            for k in range(3):
                np.add.at(acc, self.faces[:, k], cr)
            n = np.linalg.norm(acc, axis=1)
            ok = n > 1e-300
            acc[ok] /= n[ok, None]
            acc[~ok] = 0.0
            self._cache["vertex_normals"] = acc
        return self._cache["vertex_normals"]

    @property
    def bbox(self):
        """(min, max) corners of the axis-aligned bounding box."""
        if self.n_vertices == 0:
            raise ValueError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    @property
    def mean_edge_length(self) -> float:
        e = self.edges
        if len(e) == 0:
            return 0.0
        d = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        return float(d.mean())

    # ------------------------------------------------------------------
    # misc

    def is_boundary_vertex(self) -> np.ndarray:
        """(V,) bool mask of vertices on at least one boundary edge."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        be = self.edges[self.boundary_edge_mask]
        mask[be.ravel()] = True
        return mask

    def with_vertices(self, vertices) -> "TriMesh":
        """Same connectivity, new vertex positions."""
        return TriMesh(vertices, self.faces)

    def __repr__(self):
        return f"TriMesh(V={self.n_vertices}, F={self.n_faces})"


# ----------------------------------------------------------------------
# boundary loops


@dataclass(frozen=True)
class BoundaryLoop:
    """Closed cycle of boundary vertices, consecutive pairs sharing a
    boundary edge."""

    vertices: np.ndarray

    def __len__(self):
        return len(self.vertices)

    def edge_lengths(self, mesh: TriMesh) -> np.ndarray:
        v = mesh.vertices[self.vertices]
        return np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)


def boundary_loops(mesh: TriMesh) -> list[BoundaryLoop]:
    """Extract all boundary loops, longest first.

    Each loop is an ordered cycle of vertex indices following the
    direction the boundary edges appear in their single incident face.
    Ties in length are broken by the smallest vertex id in the loop.

    Raises
    ------
    MeshTopologyError
        If the mesh is not edge-manifold, or a boundary vertex is shared
        by more than one loop (pinched boundary).
    """
    if not mesh.is_edge_manifold():
        a, b = mesh.first_nonmanifold_edge()
        raise MeshTopologyError(f"edge ({a}, {b}) is shared by more than two faces")
    edges, inverse, counts, directed = mesh._edge_tables()
    boundary = counts[inverse] == 1
    next_of: dict[int, int] = {}
    for tail, head in directed[boundary]:
        tail, head = int(tail), int(head)
        if tail in next_of:
            raise MeshTopologyError(
                f"boundary vertex {tail} is shared by more than one loop"
            )
        next_of[tail] = head
    loops = []
    seen: set[int] = set()
    for start in sorted(next_of):
        if start in seen:
            continue
        cycle = [start]
        seen.add(start)
        cur = next_of[start]
        while cur != start:
            if cur in seen or cur not in next_of:
                raise MeshTopologyError(f"boundary walk broke at vertex {cur}")
            cycle.append(cur)
            seen.add(cur)
            cur = next_of[cur]
        loops.append(BoundaryLoop(np.asarray(cycle, dtype=np.int64)))
    loops.sort(key=lambda lp: (-len(lp), int(lp.vertices.min())))
    return loops


# ----------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationTransform:
    """Similarity transform bringing a mesh to the canonical frame
    (bounding-box center at the origin, diagonal length 1)."""

    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points / self.scale + self.center


def normalize(mesh: TriMesh):
    """Center the mesh at its bounding-box center and scale the diagonal to 1.

    Returns
    -------
    (TriMesh, NormalizationTransform)

    Raises
    ------
    ValueError
        If the bounding box is degenerate (zero diagonal).
    """
    lo, hi = mesh.bbox
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise ValueError("degenerate bounding box: cannot normalize")
    t = NormalizationTransform(center=(lo + hi) / 2.0, scale=1.0 / diag)
    return mesh.with_vertices(t.apply(mesh.vertices)), t


# ----------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidityReport:
    manifold: bool
    watertight: bool
    single_component: bool
    orientable: bool
    dropped_faces: int = 0

    @property
    def ok(self) -> bool:
        return self.manifold and self.watertight and self.single_component and self.orientable


def _vertex_fans_ok(mesh: TriMesh) -> bool:
    """True when every vertex star is a single (open or closed) fan."""
    vf = mesh.vertex_faces
    faces = mesh.faces
    for v in range(mesh.n_vertices):
        incident = vf[v]
        if len(incident) == 0:
            continue
        # edges opposite to v within each incident face: (other1, other2)
        wings = []
        for fi in incident:
            corners = [int(x) for x in faces[fi] if x != v]
            wings.append((corners[0], corners[1]))
        # union-find over incident faces joined by shared v-edges
        parent = list(range(len(wings)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        edge_owner: dict[int, int] = {}
        edge_uses: dict[int, int] = {}
        for i, (a, b) in enumerate(wings):
            for w in (a, b):
                edge_uses[w] = edge_uses.get(w, 0) + 1
                if w in edge_owner:
                    ri, rj = find(i), find(edge_owner[w])
                    parent[ri] = rj
                else:
                    edge_owner[w] = i
        roots = {find(i) for i in range(len(wings))}
        if len(roots) != 1:
            return False
        n_boundary = sum(1 for u in edge_uses.values() if u == 1)
        if n_boundary not in (0, 2):
            return False
    return True


def validate(mesh: TriMesh) -> ValidityReport:
    """Compute manifoldness, watertightness, connectivity and orientation flags.

    ``manifold`` requires both edge-manifoldness (every edge on at most
    two faces) and vertex-manifoldness (every vertex star a single fan).
    ``watertight`` means no boundary edges.  ``orientable`` reports
    whether the winding as given is consistent: no undirected edge is
    traversed in the same direction by two faces.
    """
    counts = mesh.edge_face_counts
    edge_manifold = bool(counts.size == 0 or counts.max() <= 2)
    manifold = edge_manifold and _vertex_fans_ok(mesh)
    watertight = bool(counts.size > 0) and bool((counts == 2).all())
    _, _, _, directed = mesh._edge_tables()
    n_unique_directed = len(np.unique(directed, axis=0)) if len(directed) else 0
    orientable = n_unique_directed == len(directed)
    single_component = _face_graph_connected(mesh)
    return ValidityReport(
        manifold=manifold,
        watertight=watertight,
        single_component=single_component,
        orientable=orientable,
        dropped_faces=mesh.dropped_faces,
    )


def _face_graph_connected(mesh: TriMesh) -> bool:
    if mesh.n_faces == 0:
        return False
    adj = mesh.face_adjacency
    seen = np.zeros(mesh.n_faces, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        fi = stack.pop()
        for fj in adj[fi]:
            if not seen[fj]:
                seen[fj] = True
                stack.append(int(fj))
    return bool(seen.all())


# ----------------------------------------------------------------------
# graph traversal helpers


def vertex_graph_distances(mesh: TriMesh, sources, max_depth=None) -> np.ndarray:
    """Breadth-first hop counts from a set of source vertices.

    Returns an (V,) int array; unreachable vertices get -1.
    """
    dist = np.full(mesh.n_vertices, -1, dtype=np.int64)
    frontier = [int(s) for s in sources]
    for s in frontier:
        dist[s] = 0
    nbr = mesh.vertex_neighbors
    depth = 0
    while frontier:
        if max_depth is not None and depth >= max_depth:
            break
        nxt = []
        for v in frontier:
            for w in nbr[v]:
                if dist[w] < 0:
                    dist[w] = depth + 1
                    nxt.append(int(w))
        frontier = nxt
        depth += 1
    return dist


def face_submesh(mesh: TriMesh, face_ids):
    """Extract the submesh spanned by ``face_ids``.

    Returns
    -------
    (TriMesh, vertex_map, face_map)
        ``vertex_map`` and ``face_map`` hold the parent vertex/face index
        for each submesh vertex/face, in submesh order.
    """
    face_ids = np.asarray(sorted(int(f) for f in face_ids), dtype=np.int64)
    if face_ids.size == 0:
        raise ValueError("cannot build a submesh from zero faces")
    sub_faces_parent = mesh.faces[face_ids]
    vertex_map = np.unique(sub_faces_parent)
    local = {int(p): i for i, p in enumerate(vertex_map)}
    sub_faces = np.vectorize(local.__getitem__)(sub_faces_parent)
    sub = TriMesh(mesh.vertices[vertex_map], sub_faces)
    return sub, vertex_map, face_ids


def is_topological_disk(mesh: TriMesh) -> bool:
    """True for a connected manifold patch with one boundary loop and
    Euler characteristic 1."""
    rep = validate(mesh)
    if not (rep.manifold and rep.single_component):
        return False
    if mesh.euler_characteristic != 1:
        return False
    try:
        loops = boundary_loops(mesh)
    except MeshTopologyError:
        return False
    return len(loops) == 1


def grow_disk_submesh(mesh: TriMesh, allowed_faces, start_face: int) -> np.ndarray:
    """Grow the largest reachable disk patch inside ``allowed_faces``.

    Starting from ``start_face``, neighboring allowed faces are absorbed
    in repeated sweeps (ascending face id); a face is skipped whenever
    adding it would break disk topology (pinched vertex, or closing the
    region into a boundaryless surface).  Returns sorted face ids.
    """
    allowed = set(int(f) for f in allowed_faces)
    start_face = int(start_face)
    if start_face not in allowed:
        raise ValueError("start_face must be one of allowed_faces")
    faces = mesh.faces
    adj = mesh.face_adjacency

    def sides(fi):
        a, b, c = (int(x) for x in faces[fi])
        return ((a, b) if a < b else (b, a),
                (b, c) if b < c else (c, b),
                (c, a) if c < a else (a, c))

    region = {start_face}
    region_vertices = {int(v) for v in faces[start_face]}
    rim = set(sides(start_face))
    fringe = {int(f) for f in adj[start_face] if int(f) in allowed}

    changed = True
    while changed:
        changed = False
        for fi in sorted(fringe):
            if fi in region:
                continue
            shared = sum(1 for e in sides(fi) if e in rim)
            known = sum(1 for v in faces[fi] if int(v) in region_vertices)
            if not ((shared == 1 and known == 2) or (shared == 2 and known == 3)):
                continue
            region.add(fi)
            for e in sides(fi):
                if e in rim:
                    rim.remove(e)
                else:
                    rim.add(e)
            for v in faces[fi]:
                region_vertices.add(int(v))
            for fj in adj[fi]:
                fj = int(fj)
                if fj in allowed and fj not in region:
                    fringe.add(fj)
            changed = True
        fringe -= region
    return np.asarray(sorted(region), dtype=np.int64)
