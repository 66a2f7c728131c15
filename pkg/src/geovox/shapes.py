"""Procedural test meshes: boxes, icospheres, cylinders, tori, L-brackets.

All generators return consistent (watertight, outward-oriented) meshes and
are deterministic, which makes them usable both as fixtures and as a
synthetic classification corpus.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

_CUBE_QUADS = [
    (0, 3, 2, 1),  # z = lo
    (4, 5, 6, 7),  # z = hi
    (0, 1, 5, 4),  # y = lo
    (2, 3, 7, 6),  # y = hi
    (0, 4, 7, 3),  # x = lo
    (1, 2, 6, 5),  # x = hi
]


def _quads_to_tris(quads):
    tris = []
    for q in quads:
        tris.append([q[0], q[1], q[2]])
        tris.append([q[0], q[2], q[3]])
    return tris


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with the given edge lengths."""
    sx, sy, sz = (s / 2.0 for s in size)
    cx, cy, cz = center
    corners = np.array(
        [
            [cx - sx, cy - sy, cz - sz],
            [cx + sx, cy - sy, cz - sz],
            [cx + sx, cy + sy, cz - sz],
            [cx - sx, cy + sy, cz - sz],
            [cx - sx, cy - sy, cz + sz],
            [cx + sx, cy - sy, cz + sz],
            [cx + sx, cy + sy, cz + sz],
            [cx - sx, cy + sy, cz + sz],
        ]
    )
    return TriangleMesh(corners, _quads_to_tris(_CUBE_QUADS))


def unit_cube() -> TriangleMesh:
    """The surface of [0, 1]^3."""
    return box(center=(0.5, 0.5, 0.5))


def icosphere(radius=1.0, subdivisions=2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Sphere approximated by a subdivided icosahedron (inscribed vertices)."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts / np.linalg.norm(verts[0]))
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    pts = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(pts, faces)


def cylinder(
    radius=0.5, height=1.0, segments=24, center=(0.0, 0.0, 0.0)
) -> TriangleMesh:
    """Capped right cylinder along z."""
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    verts = np.vstack(
        [bottom, top, [[0.0, 0.0, -height / 2.0]], [[0.0, 0.0, height / 2.0]]]
    ) + np.asarray(center, dtype=np.float64)
    bc, tc = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + j])
        faces.append([i, segments + j, segments + i])
        faces.append([tc, segments + i, segments + j])
        faces.append([bc, j, i])
    return TriangleMesh(verts, faces)


def torus(
    major_radius=1.0,
    minor_radius=0.35,
    major_segments=24,
    minor_segments=12,
    center=(0.0, 0.0, 0.0),
) -> TriangleMesh:
    """Torus around the z axis (Euler characteristic 0)."""
    u = 2.0 * np.pi * np.arange(major_segments) / major_segments
    v = 2.0 * np.pi * np.arange(minor_segments) / minor_segments
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major_radius + minor_radius * np.cos(vv)) * np.cos(uu)
    y = (major_radius + minor_radius * np.cos(vv)) * np.sin(uu)
    z = minor_radius * np.sin(vv)
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    verts += np.asarray(center, dtype=np.float64)
    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a = i * minor_segments + j
            b = ((i + 1) % major_segments) * minor_segments + j
            c = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            d = i * minor_segments + (j + 1) % minor_segments
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriangleMesh(verts, faces)


def make_synthetic_dataset(
    directory,
    n_per_class: int = 100,
    seed: int = 0,
    train_fraction: float = 0.7,
):
    """Write a 3-class corpus (boxes, icospheres, cylinders) plus manifest.

    Proportions, tessellation resolutions and orientations are randomized
    per object; the split is stratified per class. Returns the manifest
    path.
    """
    from pathlib import Path

    from .mesh import apply_transform, sample_rotations, save_mesh

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = ["path,label,split"]
    n_train = int(round(train_fraction * n_per_class))
    for label in ("box", "sphere", "cylinder"):
        for i in range(n_per_class):
            if label == "box":
                mesh = box(size=rng.uniform(0.15, 1.0, size=3))
            elif label == "sphere":
                mesh = icosphere(
                    radius=rng.uniform(0.2, 0.5),
                    subdivisions=int(rng.integers(1, 3)),
                )
            else:
                mesh = cylinder(
                    radius=rng.uniform(0.1, 0.35),
                    height=rng.uniform(0.3, 1.2),
                    segments=int(rng.integers(10, 28)),
                )
            (rot,) = sample_rotations(1, int(rng.integers(0, 2**62)))
            mesh = apply_transform(mesh, rot)
            name = f"{label}_{i:03d}.obj"
            save_mesh(mesh, directory / name)
            split = "train" if i < n_train else "test"
            rows.append(f"{name},{label},{split}")
    manifest = directory / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


def l_bracket(depth=1.0) -> TriangleMesh:
    """Non-convex L-shaped prism (a 2x2x`depth` box with a 1x1 notch).

    Cross-section area 3, volume 3*depth; has one reflex edge, which makes
    it a useful check for signed dihedral contributions.
    """
    profile = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    n = len(profile)
    verts = [(x, y, 0.0) for x, y in profile] + [(x, y, depth) for x, y in profile]
    faces = []
    for i in range(1, n - 1):  # fan from (0, 0); valid for this profile
        faces.append([0, i + 1, i])  # bottom, -z
        faces.append([n, n + i, n + i + 1])  # top, +z
    for i in range(n):
        j = (i + 1) % n
        faces.append([i, j, n + j])
        faces.append([i, n + j, n + i])
    return TriangleMesh(np.array(verts, dtype=np.float64), faces)
