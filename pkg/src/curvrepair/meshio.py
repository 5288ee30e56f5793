"""OBJ and PLY mesh file reading and writing."""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from .mesh import MeshFormatError, MeshTopologyError, TriMesh

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_mesh(path, strict: bool = True) -> TriMesh:
    """Load an OBJ or PLY mesh.

    Polygons with more than three sides are fan-split into triangles.
    Degenerate faces are dropped (count kept on ``TriMesh.dropped_faces``).

    Parameters
    ----------
    path : str or Path
    strict : bool
        When true (default), raise :class:`MeshTopologyError` naming the
        first offending edge if the loaded mesh is not edge-manifold.

    Raises
    ------
    MeshFormatError
        On parse failure, with the line or byte offset of the problem.
    MeshTopologyError
        On non-manifold input when ``strict`` is set.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _load_obj(path)
    elif suffix == ".ply":
        mesh = _load_ply(path)
    else:
        raise MeshFormatError(f"unsupported mesh format: {path.name!r}")
    if strict and not mesh.is_edge_manifold():
        a, b = mesh.first_nonmanifold_edge()
        raise MeshTopologyError(
            f"{path.name}: edge ({a}, {b}) is shared by more than two faces"
        )
    return mesh


def save_mesh(path, mesh: TriMesh, vertex_colors=None, binary: bool = True) -> None:
    """Write a mesh as OBJ (ascii) or PLY (binary little-endian by default).

    ``vertex_colors`` is an optional (V, 3) uint8 array, stored as PLY
    vertex properties (ignored for OBJ).  Vertex and face order is
    preserved exactly, so identical meshes produce identical files.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if vertex_colors is not None:
        vertex_colors = np.asarray(vertex_colors, dtype=np.uint8)
        if vertex_colors.shape != (mesh.n_vertices, 3):
            raise ValueError("vertex_colors must be (V, 3) uint8")
    if suffix == ".obj":
        _save_obj(path, mesh)
    elif suffix == ".ply":
        _save_ply(path, mesh, vertex_colors, binary)
    else:
        raise MeshFormatError(f"unsupported mesh format: {path.name!r}")


# ----------------------------------------------------------------------
# OBJ


def _fan_split(poly, faces_out):
    for k in range(1, len(poly) - 1):
        faces_out.append((poly[0], poly[k], poly[k + 1]))


def _load_obj(path: Path) -> TriMesh:
    vertices: list = []
    faces: list = []
    with open(path, "r", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path.name}:{lineno}: short vertex line")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise MeshFormatError(f"{path.name}:{lineno}: {exc}") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path.name}:{lineno}: face needs >= 3 vertices")
                poly = []
                for token in parts[1:]:
                    idx_text = token.split("/")[0]
                    try:
                        idx = int(idx_text)
                    except ValueError as exc:
                        raise MeshFormatError(
                            f"{path.name}:{lineno}: bad face index {token!r}"
                        ) from exc
                    if idx < 0:
                        idx = len(vertices) + idx
                    else:
                        idx = idx - 1
                    if idx < 0 or idx >= len(vertices):
                        raise MeshFormatError(
                            f"{path.name}:{lineno}: face index {token!r} out of range"
                        )
                    poly.append(idx)
                _fan_split(poly, faces)
            # other tags (vn, vt, o, g, s, usemtl, mtllib, l, p) are ignored
    if not vertices:
        raise MeshFormatError(f"{path.name}: no vertices found")
    return TriMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def _save_obj(path: Path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# ----------------------------------------------------------------------
# PLY


def _load_ply(path: Path) -> TriMesh:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic.strip() != b"ply":
            raise MeshFormatError(f"{path.name}:1: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop_name, dtype) or ('list', count_dt, idx_dt, name)])
        lineno = 1
        while True:
            line = fh.readline()
            lineno += 1
            if not line:
                raise MeshFormatError(f"{path.name}:{lineno}: header ended prematurely")
            parts = line.decode("ascii", errors="replace").strip().split()
            if not parts:
                continue
            if parts[0] == "comment":
                continue
            if parts[0] == "format":
                if parts[1] == "ascii":
                    fmt = "ascii"
                elif parts[1] == "binary_little_endian":
                    fmt = "binary"
                else:
                    raise MeshFormatError(
                        f"{path.name}:{lineno}: unsupported format {parts[1]!r}"
                    )
            elif parts[0] == "element":
                elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
            elif parts[0] == "property":
                if not elements:
                    raise MeshFormatError(f"{path.name}:{lineno}: property before element")
                if parts[1] == "list":
                    count_t, idx_t = parts[2], parts[3]
                    if count_t not in _PLY_SCALARS or idx_t not in _PLY_SCALARS:
                        raise MeshFormatError(f"{path.name}:{lineno}: bad list types")
                    elements[-1]["props"].append(("list", count_t, idx_t, parts[4]))
                else:
                    if parts[1] not in _PLY_SCALARS:
                        raise MeshFormatError(
                            f"{path.name}:{lineno}: unknown type {parts[1]!r}"
                        )
                    elements[-1]["props"].append(("scalar", parts[1], parts[2]))
            elif parts[0] == "end_header":
                break
            else:
                raise MeshFormatError(
                    f"{path.name}:{lineno}: unexpected header line {parts[0]!r}"
                )
        if fmt is None:
            raise MeshFormatError(f"{path.name}: missing format line")
        if fmt == "ascii":
            return _read_ply_ascii(path, fh, elements, lineno)
        return _read_ply_binary(path, fh, elements)


def _vertex_columns(props):
    """Indices of x, y, z scalar properties within a vertex element."""
    names = [p[2] for p in props if p[0] == "scalar"]
    try:
        return names.index("x"), names.index("y"), names.index("z")
    except ValueError as exc:
        raise MeshFormatError("vertex element lacks x/y/z properties") from exc


def _read_ply_ascii(path, fh, elements, lineno):
    vertices = None
    faces: list = []
    for elem in elements:
        if elem["name"] == "vertex":
            if any(p[0] == "list" for p in elem["props"]):
                raise MeshFormatError(f"{path.name}: list property on vertex element")
            xi, yi, zi = _vertex_columns(elem["props"])
            rows = np.empty((elem["count"], 3), dtype=np.float64)
            for i in range(elem["count"]):
                line = fh.readline()
                lineno += 1
                vals = line.split()
                if len(vals) < len(elem["props"]):
                    raise MeshFormatError(f"{path.name}:{lineno}: short vertex row")
                try:
                    rows[i] = (float(vals[xi]), float(vals[yi]), float(vals[zi]))
                except ValueError as exc:
                    raise MeshFormatError(f"{path.name}:{lineno}: {exc}") from exc
            vertices = rows
        elif elem["name"] == "face":
            for _ in range(elem["count"]):
                line = fh.readline()
                lineno += 1
                vals = line.split()
                if not vals:
                    raise MeshFormatError(f"{path.name}:{lineno}: short face row")
                try:
                    n = int(vals[0])
                    poly = [int(t) for t in vals[1 : 1 + n]]
                except ValueError as exc:
                    raise MeshFormatError(f"{path.name}:{lineno}: {exc}") from exc
                if len(poly) != n or n < 3:
                    raise MeshFormatError(f"{path.name}:{lineno}: bad face row")
                _fan_split(poly, faces)
        else:
            for _ in range(elem["count"]):
                fh.readline()
                lineno += 1
    if vertices is None:
        raise MeshFormatError(f"{path.name}: no vertex element")
    return TriMesh(vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def _read_ply_binary(path, fh, elements):
    vertices = None
    faces: list = []
    for elem in elements:
        props = elem["props"]
        if elem["name"] == "vertex" and all(p[0] == "scalar" for p in props):
            dtype = np.dtype([(f"c{i}", "<" + _PLY_SCALARS[p[1]]) for i, p in enumerate(props)])
            raw = fh.read(dtype.itemsize * elem["count"])
            if len(raw) != dtype.itemsize * elem["count"]:
                raise MeshFormatError(
                    f"{path.name}: truncated vertex data at byte offset {fh.tell()}"
                )
            table = np.frombuffer(raw, dtype=dtype)
            xi, yi, zi = _vertex_columns(props)
            vertices = np.stack(
                [table[f"c{xi}"], table[f"c{yi}"], table[f"c{zi}"]], axis=1
            ).astype(np.float64)
        elif elem["name"] == "face":
            if len(props) != 1 or props[0][0] != "list":
                raise MeshFormatError(f"{path.name}: unsupported face properties")
            _, count_t, idx_t, _ = props[0]
            count_dt = np.dtype("<" + _PLY_SCALARS[count_t])
            idx_dt = np.dtype("<" + _PLY_SCALARS[idx_t])
            for _ in range(elem["count"]):
                raw = fh.read(count_dt.itemsize)
                if len(raw) != count_dt.itemsize:
                    raise MeshFormatError(
                        f"{path.name}: truncated face data at byte offset {fh.tell()}"
                    )
                n = int(np.frombuffer(raw, dtype=count_dt)[0])
                raw = fh.read(idx_dt.itemsize * n)
                if len(raw) != idx_dt.itemsize * n:
                    raise MeshFormatError(
                        f"{path.name}: truncated face data at byte offset {fh.tell()}"
                    )
                poly = np.frombuffer(raw, dtype=idx_dt).tolist()
                if n < 3:
                    raise MeshFormatError(f"{path.name}: face with fewer than 3 vertices")
                _fan_split(poly, faces)
        else:
            # skip scalar-only elements we do not care about
            if any(p[0] == "list" for p in props):
                raise MeshFormatError(
                    f"{path.name}: cannot skip element {elem['name']!r} with list property"
                )
            size = sum(np.dtype(_PLY_SCALARS[p[1]]).itemsize for p in props)
            fh.read(size * elem["count"])
    if vertices is None:
        raise MeshFormatError(f"{path.name}: no vertex element")
    return TriMesh(vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def _save_ply(path: Path, mesh: TriMesh, vertex_colors, binary: bool) -> None:
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {mesh.n_vertices}")
    header += ["property double x", "property double y", "property double z"]
    if vertex_colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append(f"element face {mesh.n_faces}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if vertex_colors is not None:
                for (x, y, z), (r, g, b) in zip(mesh.vertices, vertex_colors):
                    fh.write(struct.pack("<dddBBB", x, y, z, r, g, b))
            else:
                fh.write(mesh.vertices.astype("<f8").tobytes())
            faces = mesh.faces.astype("<i4")
            rec = np.empty(
                len(faces), dtype=np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
            )
            rec["n"] = 3
            rec["idx"] = faces
            fh.write(rec.tobytes())
        else:
            lines = []
            for i, (x, y, z) in enumerate(mesh.vertices):
                row = f"{x:.17g} {y:.17g} {z:.17g}"
                if vertex_colors is not None:
                    r, g, b = vertex_colors[i]
                    row += f" {r} {g} {b}"
                lines.append(row)
            for a, b, c in mesh.faces:
                lines.append(f"3 {a} {b} {c}")
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
