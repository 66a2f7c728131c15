"""Triangle meshes: loading, validation, orientation checks and normalization.

Meshes are immutable after construction: ``vertices`` is a float64 (V, 3)
array, ``faces`` an int64 (F, 3) array with counter-clockwise winding seen
from outside (outward normals). Adjacency (edges, dihedral turn angles,
vertex corner angles) is derived lazily and cached.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateExtent, EmptyMesh, ParseError

# Faces with area below this fraction of (bbox diagonal)^2 are dropped at
# load; they poison normals and angular defects.
DEGENERATE_AREA_FACTOR = 1e-12


@dataclass(frozen=True)
class ConsistencyReport:
    """Outcome of the watertightness check."""

    is_consistent: bool
    boundary_edge_count: int
    conflicting_edge_count: int


@dataclass(frozen=True)
class Transform:
    """Similarity transform v -> scale * rotation @ v + translation.

    ``rotation`` is orthogonal with det +-1 (a det of -1 encodes a
    reflection); ``scale`` is strictly positive.
    """

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > 1e-12:
            raise ValueError(f"rotation is not orthogonal (|R^T R - I| = {err:.3g})")

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    @property
    def is_reflection(self) -> bool:
        return float(np.linalg.det(self.rotation)) < 0.0

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.rotation.T) + self.translation

    def then(self, other: "Transform") -> "Transform":
        """Composition: returns t with t(v) = other(self(v))."""
        return Transform(
            other.rotation @ self.rotation,
            other.scale * (other.rotation @ self.translation) + other.translation,
            other.scale * self.scale,
        )


class TriangleMesh:
    """Indexed triangle mesh with cached adjacency."""

    def __init__(self, vertices, faces, *, weld: bool = False):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if not np.isfinite(vertices).all():
            raise ParseError("mesh has non-finite vertex coordinates")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ParseError("face references a vertex index out of range")
        if weld:
            vertices, faces = _weld_exact(vertices, faces)
        vertices, faces, dropped = _drop_degenerate(vertices, faces)
        if len(faces) == 0:
            raise EmptyMesh("mesh has no non-degenerate faces")
        if dropped:
            warnings.warn(f"dropped {dropped} degenerate face(s)", stacklevel=2)
        self.vertices = vertices
        self.faces = faces
        self.dropped_faces = dropped
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit outward normals, (F, 3)."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / norm

    @cached_property
    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def corner_angles(self) -> np.ndarray:
        """Interior angle at each face corner, (F, 3)."""
        v = self.vertices[self.faces]  # (F, 3, 3)
        angles = np.empty((len(self.faces), 3))
        for i in range(3):
            e1 = v[:, (i + 1) % 3] - v[:, i]
            e2 = v[:, (i + 2) % 3] - v[:, i]
            cross = np.linalg.norm(np.cross(e1, e2), axis=1)
            dot = np.einsum("ij,ij->i", e1, e2)
            angles[:, i] = np.arctan2(cross, dot)
        return angles

    @cached_property
    def vertex_defects(self) -> np.ndarray:
        """Angular defect 2*pi - sum(incident corner angles) per vertex, (V,)."""
        defects = np.full(len(self.vertices), 2.0 * np.pi)
        np.subtract.at(defects, self.faces.ravel(), self.corner_angles.ravel())
        return defects

    @cached_property
    def _edge_data(self):
        faces = self.faces
        directed = np.stack(
            [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        und = np.sort(directed, axis=1)
        edges, inverse = np.unique(und, axis=0, return_inverse=True)
        forward = directed[:, 0] < directed[:, 1]  # traverses low->high index
        n_edges = len(edges)
        total = np.bincount(inverse, minlength=n_edges)
        fwd = np.bincount(inverse[forward], minlength=n_edges)
        # Incident face index per direction (valid only where counts allow).
        face_idx = np.repeat(np.arange(len(faces)), 3)
        face_fwd = np.full(n_edges, -1, dtype=np.int64)
        face_bwd = np.full(n_edges, -1, dtype=np.int64)
        face_fwd[inverse[forward]] = face_idx[forward]
        face_bwd[inverse[~forward]] = face_idx[~forward]
        return edges, inverse, total, fwd, face_fwd, face_bwd

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as (E, 2) low/high vertex-index pairs."""
        return self._edge_data[0]

    @cached_property
    def edge_faces(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """Map undirected edge (lo, hi) -> incident face indices."""
        edges, inverse, *_ = self._edge_data
        face_idx = np.repeat(np.arange(len(self.faces)), 3)
        out: dict[tuple[int, int], tuple[int, ...]] = {}
        order = np.argsort(inverse, kind="stable")
        splits = np.searchsorted(inverse[order], np.arange(len(edges)))
        for e in range(len(edges)):
            lo = splits[e]
            hi = splits[e + 1] if e + 1 < len(edges) else len(order)
            out[tuple(edges[e])] = tuple(face_idx[order[lo:hi]])
        return out

    @cached_property
    def edge_turn_angles(self) -> np.ndarray:
        """Signed (pi - dihedral) per edge, (E,); NaN where not well-defined.

        Positive on convex edges, negative on reflex ones, zero across
        coplanar faces. Defined only for edges with exactly two compatibly
        oriented incident faces.
        """
        edges, _, total, fwd, face_fwd, face_bwd = self._edge_data
        theta = np.full(len(edges), np.nan)
        ok = (total == 2) & (fwd == 1)
        if not ok.any():
            return theta
        fa = face_fwd[ok]
        fb = face_bwd[ok]
        na = self.face_normals[fa]
        nb = self.face_normals[fb]
        # Edge direction as traversed by face A (low -> high vertex index).
        evec = self.vertices[edges[ok, 1]] - self.vertices[edges[ok, 0]]
        evec = evec / np.linalg.norm(evec, axis=1, keepdims=True)
        sin = np.einsum("ij,ij->i", np.cross(na, nb), evec)
        cos = np.einsum("ij,ij->i", na, nb)
        theta[ok] = np.arctan2(sin, cos)
        return theta

    @cached_property
    def _vertex_fan_csr(self):
        corners = self.faces.ravel()
        order = np.argsort(corners, kind="stable")
        starts = np.searchsorted(corners[order], np.arange(len(self.vertices) + 1))
        return order, starts

    def vertex_fan(self, vertex: int) -> list[tuple[int, float]]:
        """Incident (face index, corner angle) pairs for one vertex."""
        order, starts = self._vertex_fan_csr
        slots = order[starts[vertex] : starts[vertex + 1]]
        angles = self.corner_angles.ravel()
        return [(int(s // 3), float(angles[s])) for s in slots]

    @cached_property
    def consistency(self) -> ConsistencyReport:
        _, _, total, fwd, *_ = self._edge_data
        boundary = int((total == 1).sum())
        conflicting = int(((total == 2) & (fwd != 1)).sum() + (total > 2).sum())
        return ConsistencyReport(
            boundary == 0 and conflicting == 0, boundary, conflicting
        )

    @property
    def is_consistent(self) -> bool:
        return self.consistency.is_consistent


def check_consistency(mesh: TriangleMesh) -> ConsistencyReport:
    """Report whether every edge has exactly two compatibly oriented faces."""
    return mesh.consistency


def _weld_exact(vertices: np.ndarray, faces: np.ndarray):
    """Merge vertices equal in all three coordinates, keeping first-seen order."""
    view = vertices.view([("x", "f8"), ("y", "f8"), ("z", "f8")]).reshape(-1)
    _, first, inverse = np.unique(view, return_index=True, return_inverse=True)
    keep = np.sort(first)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return vertices[keep], rank[inverse][faces]


def _drop_degenerate(vertices: np.ndarray, faces: np.ndarray):
    """Drop zero-area/repeated-index faces and then unreferenced vertices."""
    if len(faces) == 0:
        return vertices, faces, 0
    distinct = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    diag_sq = float(((hi - lo) ** 2).sum())
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    good = distinct & (areas >= DEGENERATE_AREA_FACTOR * diag_sq)
    dropped = int(len(faces) - good.sum())
    faces = faces[good]
    referenced = np.zeros(len(vertices), dtype=bool)
    referenced[faces.ravel()] = True
    if not referenced.all():
        remap = np.cumsum(referenced) - 1
        vertices = vertices[referenced]
        faces = remap[faces]
    return vertices, faces, dropped


# ---------------------------------------------------------------------------
# File formats


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Load an OBJ / STL (binary or ASCII) / OFF file.

    Vertices are welded by exact coordinate equality and degenerate faces
    dropped. ``format`` is auto-detected from the extension when omitted.
    """
    path = Path(path)
    if format is None:
        ext = path.suffix.lower()
        format = {".obj": "obj", ".stl": "stl", ".off": "off"}.get(ext)
        if format is None:
            raise ParseError(f"cannot infer mesh format from extension {ext!r}")
    format = format.lower().replace("_", "-")
    data = path.read_bytes()
    if format == "obj":
        vertices, faces = _parse_obj(data)
    elif format == "off":
        vertices, faces = _parse_off(data)
    elif format in ("stl", "stl-binary", "stl-ascii"):
        if format == "stl":
            format = "stl-binary" if _looks_binary_stl(data) else "stl-ascii"
        if format == "stl-binary":
            vertices, faces = _parse_stl_binary(data)
        else:
            vertices, faces = _parse_stl_ascii(data)
    else:
        raise ParseError(f"unknown mesh format {format!r}")
    return TriangleMesh(vertices, faces, weld=True)


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write as Wavefront OBJ with full float precision."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def _fan(indices: list[int]) -> list[list[int]]:
    return [[indices[0], indices[i], indices[i + 1]] for i in range(1, len(indices) - 1)]


def _parse_obj(data: bytes):
    vertices, faces = [], []
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad vertex coordinate") from exc
        elif parts[0] == "f":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: face needs at least 3 vertices")
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise ParseError(f"line {lineno}: bad face index {token!r}") from exc
                if i == 0:
                    raise ParseError(f"line {lineno}: OBJ indices are 1-based")
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            for tri in _fan(idx):
                faces.append(tri)
    if not faces:
        raise EmptyMesh("OBJ file contains no faces")
    _check_indices(faces, len(vertices))
    return np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64)


def _parse_off(data: bytes):
    tokens = []
    for raw in data.decode("utf-8", errors="replace").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or not tokens[0].upper().startswith("OFF"):
        raise ParseError("missing OFF header")
    pos = 1
    if tokens[0].upper() != "OFF":  # header glued to counts, e.g. "OFF8"
        tokens[0] = tokens[0][3:]
        pos = 0
    try:
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3  # skip edge count
        vertices = []
        for _ in range(nv):
            vertices.append([float(t) for t in tokens[pos : pos + 3]])
            pos += 3
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            idx = [int(t) for t in tokens[pos + 1 : pos + 1 + k]]
            pos += 1 + k
            if k < 3:
                raise ParseError("OFF face with fewer than 3 vertices")
            faces.extend(_fan(idx))
    except (ValueError, IndexError) as exc:
        raise ParseError("malformed OFF file") from exc
    if not faces:
        raise EmptyMesh("OFF file contains no faces")
    _check_indices(faces, nv)
    return np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64)


def _looks_binary_stl(data: bytes) -> bool:
    if len(data) < 84:
        return False
    (n,) = struct.unpack_from("<I", data, 80)
    return len(data) == 84 + 50 * n


def _parse_stl_binary(data: bytes):
    if len(data) < 84:
        raise ParseError("binary STL shorter than its 84-byte header")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * n:
        raise ParseError("binary STL size does not match its triangle count")
    if n == 0:
        raise EmptyMesh("binary STL contains no triangles")
    rec = np.frombuffer(data, dtype=np.uint8, count=50 * n, offset=84).reshape(n, 50)
    tri = rec[:, 12:48].copy().view("<f4").reshape(n, 3, 3).astype(np.float64)
    vertices = tri.reshape(-1, 3)
    faces = np.arange(3 * n, dtype=np.int64).reshape(n, 3)
    return vertices, faces


def _parse_stl_ascii(data: bytes):
    text = data.decode("utf-8", errors="replace")
    vertices = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if parts[:1] == ["vertex"]:
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: STL vertex needs 3 coordinates")
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad STL coordinate") from exc
    if len(vertices) == 0:
        raise EmptyMesh("ASCII STL contains no triangles")
    if len(vertices) % 3 != 0:
        raise ParseError("ASCII STL vertex count is not a multiple of 3")
    n = len(vertices) // 3
    faces = np.arange(3 * n, dtype=np.int64).reshape(n, 3)
    return np.array(vertices, dtype=np.float64), faces


def _check_indices(faces, n_vertices):
    arr = np.asarray(faces)
    if arr.min() < 0 or arr.max() >= n_vertices:
        raise ParseError("face references a vertex index out of range")


# ---------------------------------------------------------------------------
# Geometry operations


def normalize_to_unit_cube(
    mesh: TriangleMesh, margin: float = 0.0
) -> tuple[TriangleMesh, Transform]:
    """Center the mesh at (0.5, 0.5, 0.5) and scale it to fit the unit cube.

    The longest bounding-box edge maps to exactly ``1 - 2 * margin`` and the
    aspect ratio is preserved. Returns the normalized mesh and the transform
    that maps original to normalized coordinates.
    """
    if not 0.0 <= margin < 0.5:
        raise ValueError("margin must lie in [0, 0.5)")
    lo, hi = mesh.bounds
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise DegenerateExtent("bounding box has zero diameter")
    scale = (1.0 - 2.0 * margin) / extent
    center = (lo + hi) / 2.0
    translation = 0.5 - scale * center
    t = Transform(np.eye(3), translation, scale)
    return apply_transform(mesh, t), t


def apply_transform(mesh: TriangleMesh, t: Transform) -> TriangleMesh:
    """Map every vertex through ``t``; reflections also flip face winding."""
    vertices = t.apply_points(mesh.vertices)
    faces = mesh.faces[:, ::-1] if t.is_reflection else mesh.faces
    return TriangleMesh(vertices, faces)


def sample_rotations(
    count: int, seed: int, include_reflections: bool = False
) -> list[Transform]:
    """Draw rotations uniformly from SO(3) (or O(3) with reflections).

    Uses the standard construction from normalized 4-vectors of independent
    standard normals; with ``include_reflections`` each draw is composed with
    the central reflection with probability 1/2. Deterministic given ``seed``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        if include_reflections and rng.random() < 0.5:
            rot = -rot
        out.append(Transform(rot, np.zeros(3), 1.0))
    return out
