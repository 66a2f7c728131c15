"""The eight per-voxel surface features and their sparse-grid computation.

Per-cell kernels (``feature_sa`` etc.) are straightforward reference
implementations over :class:`~geovox.voxelize.ClippedCell`; ``compute_grid``
produces the same numbers through one shared octree traversal and vectorized
accumulation, which is the path the pipeline uses.

Feature catalogue (dimension / needs consistency / additive):

=====  ===  ===  ===
Bool     1   no   no
SA       1   no  yes
AN       3  yes  yes
QF       6   no  yes
EV       3   no   no
VAD      1  yes  yes
EAD      1  yes  yes
VE       1  yes  yes
=====  ===  ===  ===
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _clipkernel
from .errors import ConsistencyRequired
from .mesh import TriangleMesh
from .voxelize import (
    ClippedCell,
    ClippedGeometry,
    VoxelGrid,
    _linear_keys,
    clip_geometry,
    occupied_keys,
)


class FeatureKind(Enum):
    """One of the eight voxel features; member order is the canonical order."""

    BOOL = ("Bool", 1, False, False)
    SA = ("SA", 1, False, True)
    AN = ("AN", 3, True, True)
    QF = ("QF", 6, False, True)
    EV = ("EV", 3, False, False)
    VAD = ("VAD", 1, True, True)
    EAD = ("EAD", 1, True, True)
    VE = ("VE", 1, True, True)

    def __init__(self, label, dimension, requires_consistency, additive):
        self.label = label
        self.dimension = dimension
        self.requires_consistency = requires_consistency
        self.additive = additive

    def __str__(self) -> str:
        return self.label

    @classmethod
    def from_name(cls, name: str) -> "FeatureKind":
        for kind in cls:
            if kind.label.lower() == name.strip().lower():
                return kind
        valid = ", ".join(k.label for k in cls)
        raise ValueError(f"unknown feature kind {name!r}; valid kinds: {valid}")


# Component order of the symmetric QF matrix.
QF_COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")


@dataclass(frozen=True)
class FeatureValue:
    kind: FeatureKind
    components: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.components, dtype=np.float64))
        if arr.shape != (self.kind.dimension,):
            raise ValueError(
                f"{self.kind} expects {self.kind.dimension} components, "
                f"got shape {arr.shape}"
            )
        object.__setattr__(self, "components", arr)


def eigvals_sym3(comps: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of symmetric 3x3 matrices given as (..., 6).

    Components are ordered like :data:`QF_COMPONENTS`. Uses the closed-form
    trigonometric solution of the characteristic cubic; output eigenvalues
    are clamped to [0, inf) since inputs are Gram-type matrices.
    """
    comps = np.asarray(comps, dtype=np.float64)
    xx, yy, zz, xy, xz, yz = np.moveaxis(comps, -1, 0)
    q = (xx + yy + zz) / 3.0
    p1 = xy * xy + xz * xz + yz * yz
    p2 = (xx - q) ** 2 + (yy - q) ** 2 + (zz - q) ** 2 + 2.0 * p1
    p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    bxx = (xx - q) / safe_p
    byy = (yy - q) / safe_p
    bzz = (zz - q) / safe_p
    bxy = xy / safe_p
    bxz = xz / safe_p
    byz = yz / safe_p
    det_b = (
        bxx * (byy * bzz - byz * byz)
        - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz)
    )
    phi = np.arccos(np.clip(det_b / 2.0, -1.0, 1.0)) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    out = np.stack([e1, e2, e3], axis=-1)
    out = np.where(p2[..., None] > 0.0, out, np.broadcast_to(q[..., None], out.shape))
    out = np.sort(out, axis=-1)[..., ::-1]  # roundoff can perturb the order
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# Reference per-cell kernels


def feature_bool(cell: ClippedCell) -> FeatureValue:
    """1 for any materialized cell; absent keys are implicitly 0."""
    return FeatureValue(FeatureKind.BOOL, [1.0])


def feature_sa(cell: ClippedCell) -> FeatureValue:
    """Surface area of the clipped polygons."""
    return FeatureValue(FeatureKind.SA, [sum(p.area for p in cell.polygons)])


def feature_an(cell: ClippedCell) -> FeatureValue:
    """Area-weighted normal integral (3 components)."""
    total = np.zeros(3)
    for p in cell.polygons:
        total += p.area * p.normal
    return FeatureValue(FeatureKind.AN, total)


def feature_qf(cell: ClippedCell) -> FeatureValue:
    """Area-weighted second moment of the normal, 6 symmetric components."""
    total = np.zeros(6)
    for p in cell.polygons:
        n = p.normal
        total += p.area * np.array(
            [n[0] * n[0], n[1] * n[1], n[2] * n[2], n[0] * n[1], n[0] * n[2], n[1] * n[2]]
        )
    return FeatureValue(FeatureKind.QF, total)


def feature_ev(cell: ClippedCell) -> FeatureValue:
    """Sorted (descending) eigenvalues of the cell's QF matrix."""
    return FeatureValue(FeatureKind.EV, eigvals_sym3(feature_qf(cell).components))


def feature_vad(cell: ClippedCell, mesh: TriangleMesh) -> FeatureValue:
    """Total angular defect of the mesh vertices owned by the voxel."""
    defects = mesh.vertex_defects
    return FeatureValue(
        FeatureKind.VAD, [sum(float(defects[v]) for v in cell.interior_vertices)]
    )


def feature_ead(cell: ClippedCell, mesh: TriangleMesh) -> FeatureValue:
    """Sum of (pi - dihedral) times clipped edge length over the voxel.

    Convex edges contribute positively, reflex edges negatively, coplanar
    edges zero; matches the mean-curvature integral of smooth limits.
    """
    turn = mesh.edge_turn_angles
    total = 0.0
    for edge, length in cell.clipped_edges:
        t = float(turn[edge])
        if not np.isnan(t):  # boundary/conflicting edges carry no dihedral
            total += t * length
    return FeatureValue(FeatureKind.EAD, [total])


def feature_ve(cell: ClippedCell) -> FeatureValue:
    """Divergence-theorem volume element (1/3) * plane offset * area.

    The offset is measured from the unit-cube corner (0, 0, 0) of the
    normalized coordinates; the feature is deliberately not
    translation-invariant, but totals to the enclosed volume for closed
    outward-oriented meshes.
    """
    total = 0.0
    for p in cell.polygons:
        total += float(p.normal @ p.vertices[0]) * p.area / 3.0
    return FeatureValue(FeatureKind.VE, [total])


# ---------------------------------------------------------------------------
# Grid computation (single shared traversal)


def _check_kind_consistency(mesh: TriangleMesh, kinds) -> None:
    needing = [k for k in kinds if k.requires_consistency]
    if needing and not mesh.is_consistent:
        raise ConsistencyRequired(needing)


def compute_grid(
    mesh: TriangleMesh, level: int, kinds
) -> dict[FeatureKind, VoxelGrid]:
    """Sparse grids for the requested kinds from one octree traversal.

    All returned grids share one key set: the voxels holding any geometry.
    Raises :class:`ConsistencyRequired` naming the offending kinds when a
    consistency-requiring kind is requested on a non-watertight mesh.
    """
    kinds = _normalize_kinds(kinds)
    _check_kind_consistency(mesh, kinds)
    geo = clip_geometry(mesh, level)
    return grids_from_geometry(mesh, geo, kinds)


def _normalize_kinds(kinds) -> list[FeatureKind]:
    out = []
    for k in kinds:
        kind = k if isinstance(k, FeatureKind) else FeatureKind.from_name(str(k))
        if kind not in out:
            out.append(kind)
    return sorted(out, key=lambda k: list(FeatureKind).index(k))


# Additive kinds stacked into one accumulation table, with column slices.
_BASE_LAYOUT = (
    (FeatureKind.SA, slice(0, 1)),
    (FeatureKind.AN, slice(1, 4)),
    (FeatureKind.QF, slice(4, 10)),
    (FeatureKind.VAD, slice(10, 11)),
    (FeatureKind.EAD, slice(11, 12)),
    (FeatureKind.VE, slice(12, 13)),
)
_BASE_DIM = 13


def _base_table(mesh: TriangleMesh, geo: ClippedGeometry):
    """Accumulate all additive kinds per occupied voxel in one pass.

    Returns (keys, table) where table is (n_cells, 13) laid out as
    [SA | AN xyz | QF xx yy zz xy xz yz | VAD | EAD | VE].
    """
    keys = occupied_keys(geo)
    lin = _linear_keys(keys, geo.level)
    n_cells = len(keys)
    table = np.zeros((n_cells, _BASE_DIM))

    piece_slots = np.searchsorted(lin, _linear_keys(geo.piece_cells, geo.level))
    normals = mesh.face_normals
    cross_sums = _clipkernel._piece_cross_sums(geo.piece_verts, geo.piece_counts)
    piece_n = normals[geo.piece_face]
    areas = np.einsum("ij,ij->i", cross_sums, piece_n)

    def acc(slot_idx, weights):
        return np.bincount(slot_idx, weights=weights, minlength=n_cells)

    table[:, 0] = acc(piece_slots, areas)
    for d in range(3):
        table[:, 1 + d] = acc(piece_slots, areas * piece_n[:, d])
    pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
    for c, (a, b) in enumerate(pairs):
        table[:, 4 + c] = acc(piece_slots, areas * piece_n[:, a] * piece_n[:, b])
    vert_slots = np.searchsorted(lin, _linear_keys(geo.vert_cells, geo.level))
    table[:, 10] = acc(vert_slots, mesh.vertex_defects)
    seg_slots = np.searchsorted(lin, _linear_keys(geo.seg_cells, geo.level))
    turn = np.nan_to_num(mesh.edge_turn_angles[geo.seg_edge])
    table[:, 11] = acc(seg_slots, turn * geo.seg_len)
    offsets = np.einsum("ij,ij->i", normals, mesh.vertices[mesh.faces[:, 0]])
    table[:, 12] = acc(piece_slots, areas * offsets[geo.piece_face] / 3.0)
    return keys, table


def _merge_table(keys: np.ndarray, table: np.ndarray, child_level: int):
    """Sum sibling rows into their level-1 parents (exact additivity)."""
    lin = _linear_keys(keys // 2, child_level - 1)
    uniq, inverse = np.unique(lin, return_inverse=True)
    merged = np.zeros((len(uniq), table.shape[1]))
    for c in range(table.shape[1]):
        merged[:, c] = np.bincount(inverse, weights=table[:, c], minlength=len(uniq))
    n = 1 << (child_level - 1)
    parents = np.column_stack([uniq // (n * n), (uniq // n) % n, uniq % n])
    return parents, merged


def _grids_from_table(level, keys, table, kinds) -> dict[FeatureKind, VoxelGrid]:
    base = dict(_BASE_LAYOUT)
    out: dict[FeatureKind, VoxelGrid] = {}
    for kind in kinds:
        if kind is FeatureKind.BOOL:
            values = np.ones((len(keys), 1))
        elif kind is FeatureKind.EV:
            values = eigvals_sym3(table[:, base[FeatureKind.QF]])
        else:
            values = table[:, base[kind]].copy()
        out[kind] = VoxelGrid(level, keys, values, kind=kind)
    return out


def grids_from_geometry(
    mesh: TriangleMesh, geo: ClippedGeometry, kinds
) -> dict[FeatureKind, VoxelGrid]:
    """Accumulate feature grids from already-clipped geometry."""
    kinds = _normalize_kinds(kinds)
    keys, table = _base_table(mesh, geo)
    return _grids_from_table(geo.level, keys, table, kinds)


def compute_grid_stack(
    mesh: TriangleMesh, levels, kinds
) -> dict[int, dict[FeatureKind, VoxelGrid]]:
    """Grids for several resolutions from a single clip at the finest one.

    Additive kinds are merged exactly into parents level by level; EV is
    recomputed per level from the merged QF and Bool from occupancy, so the
    result matches clipping each level directly (up to roundoff).
    """
    levels = sorted(set(int(l) for l in levels))
    kinds = _normalize_kinds(kinds)
    _check_kind_consistency(mesh, kinds)
    top = levels[-1]
    geo = clip_geometry(mesh, top)
    keys, table = _base_table(mesh, geo)
    out: dict[int, dict[FeatureKind, VoxelGrid]] = {}
    for level in range(top, levels[0] - 1, -1):
        if level in levels:
            out[level] = _grids_from_table(level, keys, table, kinds)
        if level > levels[0]:
            keys, table = _merge_table(keys, table, level)
    return out
