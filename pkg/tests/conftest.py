import struct

import pytest

from geovox import shapes
from geovox.mesh import normalize_to_unit_cube

CUBE_OBJ = """\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 3 4 8
f 3 8 7
f 1 5 8
f 1 8 4
f 2 3 7
f 2 7 6
"""


@pytest.fixture(scope="session")
def cube():
    return shapes.unit_cube()


@pytest.fixture(scope="session")
def ico2():
    return shapes.icosphere(0.4, 2, center=(0.5, 0.5, 0.5))


@pytest.fixture(scope="session")
def ico4():
    return shapes.icosphere(0.4, 4, center=(0.5, 0.5, 0.5))


@pytest.fixture(scope="session")
def lbracket():
    mesh, _ = normalize_to_unit_cube(shapes.l_bracket())
    return mesh


@pytest.fixture(scope="session")
def torus():
    mesh, _ = normalize_to_unit_cube(shapes.torus())
    return mesh


@pytest.fixture
def cube_obj_path(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    return path


def write_binary_stl(mesh, path):
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80)
        fh.write(struct.pack("<I", len(mesh.faces)))
        for f, n in zip(mesh.faces, mesh.face_normals):
            fh.write(struct.pack("<3f", *n))
            for v in mesh.vertices[f]:
                fh.write(struct.pack("<3f", *v))
            fh.write(struct.pack("<H", 0))


@pytest.fixture
def cube_stl_path(tmp_path, cube):
    path = tmp_path / "cube.stl"
    write_binary_stl(cube, path)
    return path


@pytest.fixture(scope="session", autouse=True)
def warm_compiled_kernels():
    """Trigger numba compilation once so timed tests measure the algorithm."""
    from geovox.features import FeatureKind, compute_grid

    compute_grid(shapes.unit_cube(), 1, list(FeatureKind))
