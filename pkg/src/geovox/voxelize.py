"""Sparse octree voxelization of triangle meshes.

``clip_geometry`` runs the recursive octree refinement over a mesh already
normalized to the unit cube and returns flat arrays of polygon pieces, edge
subsegments and vertex assignments at the leaf level; ``octree_clip`` wraps
those arrays into per-voxel :class:`ClippedCell` records. Only non-empty
voxels materialize, so memory stays proportional to the occupied surface.

Voxel ownership is half-open: voxel (i, j, k) owns [i*h, (i+1)*h) per axis
(h = 1/N), except the last voxel per axis, which is closed. Geometry lying
exactly on a shared voxel face therefore belongs to the higher cell, which
makes polygon, edge and vertex assignment an exact partition.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _clipkernel
from .errors import FileFormatError, MeshOutOfBounds, ResolutionTooHigh, VersionMismatch
from .mesh import TriangleMesh

LEVEL_CAP = 12  # resolution cap N = 2**12 = 4096
CLIP_EPS = 1e-12  # tolerated vertex excursion outside [0, 1]^3

GRID_MAGIC = b"VXGR"
GRID_VERSION = 1


@dataclass(frozen=True)
class ClippedPolygon:
    """Planar convex polygon piece kept inside one voxel."""

    vertices: np.ndarray  # (m, 3)
    face: int  # source face index
    normal: np.ndarray  # unit normal of the source face

    @property
    def area(self) -> float:
        v = self.vertices
        s = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
        return float(0.5 * s @ self.normal)


@dataclass(frozen=True)
class ClippedCell:
    """All geometry of one occupied voxel."""

    key: tuple[int, int, int]
    level: int
    polygons: list[ClippedPolygon]
    clipped_edges: list[tuple[int, float]]  # (edge index, clipped length)
    interior_vertices: list[int]


@dataclass(frozen=True)
class ClippedGeometry:
    """Flat leaf-level clipping output shared by the feature kernels."""

    level: int
    piece_verts: np.ndarray  # (P, MAX_VERTS, 3)
    piece_counts: np.ndarray  # (P,)
    piece_face: np.ndarray  # (P,)
    piece_cells: np.ndarray  # (P, 3)
    seg_cells: np.ndarray  # (S, 3)
    seg_edge: np.ndarray  # (S,)
    seg_len: np.ndarray  # (S,)
    vert_cells: np.ndarray  # (V, 3), owner voxel of every mesh vertex


def _check_level(level: int) -> None:
    if not 0 <= level <= LEVEL_CAP:
        raise ResolutionTooHigh(
            f"octree level must lie in [0, {LEVEL_CAP}], got {level}"
        )


def clip_geometry(mesh: TriangleMesh, level: int) -> ClippedGeometry:
    """Clip a unit-cube-normalized mesh into the 2**level grid."""
    _check_level(level)
    verts = mesh.vertices
    if verts.min() < -CLIP_EPS or verts.max() > 1.0 + CLIP_EPS:
        raise MeshOutOfBounds(
            "mesh vertices leave [0, 1]^3; normalize it before clipping"
        )
    maxv = _clipkernel.MAX_VERTS
    n_faces = len(mesh.faces)
    pv = np.zeros((n_faces, maxv, 3))
    pv[:, :3] = verts[mesh.faces]
    pn = np.full(n_faces, 3, dtype=np.int64)
    pf = np.arange(n_faces, dtype=np.int64)
    pc = np.zeros((n_faces, 3), dtype=np.int64)
    for child in range(1, level + 1):
        # Piece counts grow by at most 8x per level, typically ~4x at coarse
        # levels and ~2x once pieces are small against the cells.
        cap = max(5 * len(pn), 1024)
        while True:
            ov = np.empty((cap, maxv, 3))
            on = np.empty(cap, dtype=np.int64)
            of = np.empty(cap, dtype=np.int64)
            oc = np.empty((cap, 3), dtype=np.int64)
            n_out = _clipkernel._split_level(pv, pn, pf, pc, child, ov, on, of, oc)
            if n_out >= 0:
                break
            cap *= 2
        pv, pn, pf, pc = ov[:n_out], on[:n_out], of[:n_out], oc[:n_out]

    edges = mesh.edges
    cap = _clipkernel._count_edge_segments(verts, edges, level)
    seg_cells = np.empty((cap, 3), dtype=np.int64)
    seg_edge = np.empty(cap, dtype=np.int64)
    seg_len = np.empty(cap)
    n_seg = _clipkernel._edge_segments(verts, edges, level, seg_cells, seg_edge, seg_len)

    n = 1 << level
    vert_cells = np.clip(np.floor(verts * n).astype(np.int64), 0, n - 1)
    return ClippedGeometry(
        level,
        pv,
        pn,
        pf,
        pc,
        seg_cells[:n_seg],
        seg_edge[:n_seg],
        seg_len[:n_seg],
        vert_cells,
    )


def _linear_keys(cells: np.ndarray, level: int) -> np.ndarray:
    n = 1 << level
    return (cells[:, 0] * n + cells[:, 1]) * n + cells[:, 2]


def occupied_keys(geo: ClippedGeometry) -> np.ndarray:
    """Sorted unique (M, 3) keys of all voxels holding any geometry."""
    lin = np.concatenate(
        [
            _linear_keys(geo.piece_cells, geo.level),
            _linear_keys(geo.seg_cells, geo.level),
            _linear_keys(geo.vert_cells, geo.level),
        ]
    )
    uniq = np.unique(lin)
    n = 1 << geo.level
    return np.column_stack([uniq // (n * n), (uniq // n) % n, uniq % n])


def octree_clip(mesh: TriangleMesh, level: int) -> list[ClippedCell]:
    """Clip the mesh into per-voxel geometry records at resolution 2**level."""
    geo = clip_geometry(mesh, level)
    keys = occupied_keys(geo)
    cells: dict[int, ClippedCell] = {}
    for row, lin in zip(keys, _linear_keys(keys, level)):
        cells[int(lin)] = ClippedCell(tuple(int(c) for c in row), level, [], [], [])
    normals = mesh.face_normals
    piece_lin = _linear_keys(geo.piece_cells, level)
    for p in range(len(geo.piece_counts)):
        face = int(geo.piece_face[p])
        poly = ClippedPolygon(
            geo.piece_verts[p, : geo.piece_counts[p]].copy(), face, normals[face]
        )
        cells[int(piece_lin[p])].polygons.append(poly)
    seg_lin = _linear_keys(geo.seg_cells, level)
    for s in range(len(geo.seg_len)):
        cells[int(seg_lin[s])].clipped_edges.append(
            (int(geo.seg_edge[s]), float(geo.seg_len[s]))
        )
    vert_lin = _linear_keys(geo.vert_cells, level)
    for v in range(len(geo.vert_cells)):
        cells[int(vert_lin[v])].interior_vertices.append(v)
    return [cells[k] for k in sorted(cells)]


def cell_count(cells) -> int:
    return len(cells)


def occupancy(cells, level: int) -> float:
    """Fraction of the 8**level voxels that are occupied."""
    count = cells if isinstance(cells, int) else len(cells)
    return count / float(8**level)


class VoxelGrid:
    """Sparse map from voxel keys to fixed-length feature vectors.

    Keys are kept lexicographically sorted; ``values[m]`` belongs to
    ``keys[m]``. Only voxels holding geometry are stored.
    """

    def __init__(self, level: int, keys: np.ndarray, values: np.ndarray, kind=None):
        _check_level(level)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if len(keys) != len(values):
            raise ValueError("keys and values disagree in length")
        n = 1 << level
        if len(keys) and (keys.min() < 0 or keys.max() >= n):
            raise ValueError(f"voxel keys out of range for level {level}")
        self.level = level
        self.kind = kind
        self.keys = keys
        self.values = values
        self._index: dict[tuple[int, int, int], int] | None = None

    @property
    def resolution(self) -> int:
        return 1 << self.level

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.keys)

    def _lookup(self, key) -> int | None:
        if self._index is None:
            self._index = {
                tuple(int(c) for c in k): m for m, k in enumerate(self.keys)
            }
        return self._index.get(tuple(key))

    def __contains__(self, key) -> bool:
        return self._lookup(key) is not None

    def get(self, key, default=None):
        m = self._lookup(key)
        if m is None:
            return default
        return self.values[m]

    def items(self):
        for m in range(len(self.keys)):
            yield tuple(int(c) for c in self.keys[m]), self.values[m]

    def occupancy(self) -> float:
        return occupancy(len(self), self.level)

    def component(self, c: int) -> np.ndarray:
        return self.values[:, c]

    def to_dense(self) -> np.ndarray:
        """Dense (N, N, N, dim) array with absent voxels as zero."""
        n = self.resolution
        out = np.zeros((n, n, n, self.dim))
        out[self.keys[:, 0], self.keys[:, 1], self.keys[:, 2]] = self.values
        return out

    def merge_to_parent(self) -> "VoxelGrid":
        """Component-wise sum of sibling voxels into their level-1 parents.

        Valid for additive feature kinds only; the caller is responsible for
        not merging non-additive grids.
        """
        if self.level == 0:
            raise ValueError("level-0 grid has no parent")
        parents = self.keys // 2
        lin = _linear_keys(parents, self.level - 1)
        uniq, inverse = np.unique(lin, return_inverse=True)
        values = np.zeros((len(uniq), self.dim))
        np.add.at(values, inverse, self.values)
        n = 1 << (self.level - 1)
        keys = np.column_stack([uniq // (n * n), (uniq // n) % n, uniq % n])
        return VoxelGrid(self.level - 1, keys, values, kind=self.kind)


# ---------------------------------------------------------------------------
# Sparse grid files (the CLI / bindings exchange format)


def save_grid(grid: VoxelGrid, path, format: str = "binary") -> None:
    """Write a sparse grid: little-endian binary or a readable CSV variant."""
    path = Path(path)
    kind_name = str(grid.kind) if grid.kind is not None else "?"
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(GRID_MAGIC)
            fh.write(
                struct.pack(
                    "<III8sQ",
                    GRID_VERSION,
                    grid.level,
                    grid.dim,
                    kind_name.encode()[:8].ljust(8, b"\0"),
                    len(grid),
                )
            )
            buf = np.empty((len(grid),), dtype=_record_dtype(grid.dim))
            buf["i"] = grid.keys[:, 0]
            buf["j"] = grid.keys[:, 1]
            buf["k"] = grid.keys[:, 2]
            buf["v"] = grid.values
            fh.write(buf.tobytes())
    elif format == "csv":
        with open(path, "w") as fh:
            fh.write(
                f"# geovox-grid v{GRID_VERSION} level={grid.level} "
                f"kind={kind_name} dim={grid.dim} count={len(grid)}\n"
            )
            fh.write("i,j,k," + ",".join(f"c{c}" for c in range(grid.dim)) + "\n")
            for m in range(len(grid)):
                key = ",".join(str(int(c)) for c in grid.keys[m])
                val = ",".join(f"{v:.17g}" for v in grid.values[m])
                fh.write(f"{key},{val}\n")
    else:
        raise ValueError(f"unknown grid format {format!r}")


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("i", "<i4"), ("j", "<i4"), ("k", "<i4"), ("v", "<f8", (dim,))]
    )


def load_grid(path) -> VoxelGrid:
    """Read a sparse grid file written by :func:`save_grid` (either format)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == GRID_MAGIC:
        header = struct.calcsize("<III8sQ")
        if len(data) < 4 + header:
            raise FileFormatError(f"{path}: truncated grid header")
        version, level, dim, kind_raw, count = struct.unpack_from("<III8sQ", data, 4)
        if version != GRID_VERSION:
            raise VersionMismatch(f"{path}: grid version {version} not supported")
        rec = _record_dtype(dim)
        expected = 4 + header + count * rec.itemsize
        if len(data) != expected:
            raise FileFormatError(f"{path}: truncated grid records")
        buf = np.frombuffer(data, dtype=rec, count=count, offset=4 + header)
        keys = np.column_stack([buf["i"], buf["j"], buf["k"]]).astype(np.int64)
        values = buf["v"].reshape(count, dim).copy()
        kind = kind_raw.rstrip(b"\0").decode()
        return VoxelGrid(level, keys, values, kind=kind)
    text = data.decode("utf-8", errors="replace")
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("# geovox-grid"):
        raise FileFormatError(f"{path}: not a geovox grid file")
    meta = dict(
        part.split("=", 1) for part in lines[0].split() if "=" in part
    )
    level = int(meta["level"])
    dim = int(meta["dim"])
    count = int(meta["count"])
    rows = lines[2:]
    if len(rows) != count:
        raise FileFormatError(f"{path}: expected {count} records, found {len(rows)}")
    keys = np.empty((count, 3), dtype=np.int64)
    values = np.empty((count, dim))
    for m, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != 3 + dim:
            raise FileFormatError(f"{path}: bad record on line {m + 3}")
        keys[m] = [int(x) for x in parts[:3]]
        values[m] = [float(x) for x in parts[3:]]
    return VoxelGrid(level, keys, values, kind=meta.get("kind"))


def export_cells_obj(cells: list[ClippedCell], directory) -> list[Path]:
    """Debug dump: one OBJ per voxel holding that voxel's clipped polygons."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for cell in cells:
        if not cell.polygons:
            continue
        i, j, k = cell.key
        lines = []
        offset = 1
        for poly in cell.polygons:
            for v in poly.vertices:
                lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
            idx = " ".join(str(offset + t) for t in range(len(poly.vertices)))
            lines.append(f"f {idx}")
            offset += len(poly.vertices)
        out = directory / f"cell_{i}_{j}_{k}.obj"
        out.write_text("\n".join(lines) + "\n")
        written.append(out)
    return written
