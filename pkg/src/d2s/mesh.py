"""Indexed triangle mesh, reference primitives and PLY/OBJ serialization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from d2s.pointcloud import PlyFormatError, parse_ply_header


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices (V, 3), faces (F, 3) and optional per-vertex normals/labels.

    Faces are wound counter-clockwise when seen from the side their normal
    points to (the camera side for reconstructed surfaces).
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("face with repeated vertex index")
        for name, arr in (("vertices", v), ("faces", f)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.normals is not None:
            object.__setattr__(self, "normals", np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of face corner coordinates."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def unique_edges(self) -> np.ndarray:
        """Sorted (E, 2) array of undirected edges."""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def referenced_vertices(self) -> np.ndarray:
        return np.unique(self.faces)

    def flipped(self) -> "TriangleMesh":
        return replace(self, faces=self.faces[:, ::-1])

    def translated(self, offset) -> "TriangleMesh":
        return replace(self, vertices=self.vertices + np.asarray(offset, dtype=np.float64))


def canonical_face(face) -> tuple[int, int, int]:
    """Rotation of a face starting at its smallest index (winding preserved)."""
    a, b, c = (int(i) for i in face)
    if a <= b and a <= c:
        return a, b, c
    if b <= a and b <= c:
        return b, c, a
    return c, a, b


# ---------------------------------------------------------------------------
# Primitives


def unit_cube() -> TriangleMesh:
    """Axis-aligned unit cube [0,1]^3 with outward-facing faces."""
    v = np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=np.float64,
    )
    f = [
        [0, 2, 1], [0, 3, 2],  # z = 0
        [4, 5, 6], [4, 6, 7],  # z = 1
        [0, 1, 5], [0, 5, 4],  # y = 0
        [3, 7, 6], [3, 6, 2],  # y = 1
        [0, 4, 7], [0, 7, 3],  # x = 0
        [1, 2, 6], [1, 6, 5],  # x = 1
    ]
    return TriangleMesh(v, f)


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriangleMesh:
    """Outward-oriented icosphere built by midpoint subdivision."""
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return TriangleMesh(np.array(verts) * radius, faces)


# ---------------------------------------------------------------------------
# Serialization


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_mesh_ply(mesh: TriangleMesh, path) -> None:
    """ASCII PLY with a vertex element (x y z [label]) and a face element."""
    has_labels = mesh.labels is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}"]
    lines += [f"property float {p}" for p in ("x", "y", "z")]
    if has_labels:
        lines.append("property int label")
    lines += [f"element face {len(mesh.faces)}", "property list uchar int vertex_indices", "end_header"]
    for i, p in enumerate(mesh.vertices):
        row = " ".join(map(_fmt, p))
        if has_labels:
            row += f" {int(mesh.labels[i])}"
        lines.append(row)
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh_ply(path) -> TriangleMesh:
    lines = Path(path).read_text().splitlines()
    elements, offset, fmt = parse_ply_header(lines)
    if fmt != "ascii":
        raise PlyFormatError(f"unsupported PLY format {fmt!r}")
    body = [ln for ln in lines[offset:] if ln.strip()]
    expected = sum(count for _, count, _ in elements)
    if len(body) != expected:
        raise PlyFormatError(f"header declares {expected} rows but found {len(body)}")
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    labels = None
    pos = 0
    for name, count, props in elements:
        rows = body[pos : pos + count]
        pos += count
        if name == "vertex":
            data = np.array([[float(t) for t in r.split()] for r in rows]).reshape(count, -1)
            if data.shape[1] != len(props):
                raise PlyFormatError("vertex row width does not match property count")
            col = {p: data[:, i] for i, p in enumerate(props)}
            verts = np.stack([col["x"], col["y"], col["z"]], axis=1)
            if "label" in col:
                labels = col["label"].astype(np.int64)
        elif name == "face":
            out = []
            for r in rows:
                tok = [int(t) for t in r.split()]
                if tok[0] != 3 or len(tok) != 4:
                    raise PlyFormatError("only triangular faces are supported")
                out.append(tok[1:])
            faces = np.array(out, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces, labels=labels)


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {' '.join(map(_fmt, p))}" for p in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) for t in tok[1:]]
            if len(idx) != 3:
                raise ValueError("only triangular OBJ faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def load_mesh(path) -> TriangleMesh:
    return read_obj(path) if Path(path).suffix.lower() == ".obj" else read_mesh_ply(path)


def save_mesh(mesh: TriangleMesh, path) -> None:
    if Path(path).suffix.lower() == ".obj":
        write_obj(mesh, path)
    else:
        write_mesh_ply(mesh, path)
