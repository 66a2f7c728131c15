import numpy as np
import pytest

from geovox import shapes
from geovox.errors import ConsistencyRequired, ExtractionError, FileFormatError, ManifestError
from geovox.features import FeatureKind, compute_grid
from geovox.mesh import TriangleMesh, save_mesh
from geovox.pipeline import (
    FeatureDescriptor,
    FeatureMatrix,
    FeatureRecipe,
    VoxelFeatureTransformer,
    build_matrix,
    extract_object,
    load_matrix,
    read_manifest,
    save_matrix,
)

SMALL_RECIPE = "EV@1:raw,SA@2:hist,VAD@2:hist100"


class TestDescriptors:
    @pytest.mark.parametrize(
        "name",
        ["[1][SA]", "[1][EV][0]", "[4][QF][3][1,2,0]", "[32][VAD][hist25]",
         "[128][EV][hist75][2]", "[2][SA][0,0,1]"],
    )
    def test_name_roundtrip(self, name):
        assert FeatureDescriptor.parse(name).name == name

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            FeatureDescriptor.parse("SA@1")

    def test_canonical_order(self):
        recipe = FeatureRecipe.parse("SA@2:hist50,EV@1:raw,SA@1:raw,SA@2:raw")
        names = [d.name for d in recipe.columns()]
        # resolution first, then kind (SA before EV), raw before percentiles
        assert names[0] == "[1][SA]"
        assert names[1:4] == ["[1][EV][0]", "[1][EV][1]", "[1][EV][2]"]
        assert names[4] == "[2][SA][0,0,0]"
        assert names[-1] == "[2][SA][hist50]"
        assert len(names) == 1 + 3 + 8 + 1

    def test_raw_column_count_matches_dimension_times_n3(self):
        recipe = FeatureRecipe.parse("QF@4:raw")
        assert len(recipe.columns()) == 6 * 64


class TestRecipe:
    def test_default_recipe_shape(self):
        recipe = FeatureRecipe.default()
        cols = recipe.columns()
        # 16 components of the 7 non-Bool kinds: raw at 1, 2, 4 plus five
        # percentiles at the seven dyadic resolutions 2..128
        assert len(cols) == 16 * (1 + 8 + 64) + 16 * 5 * 7
        assert recipe.levels == [0, 1, 2, 3, 4, 5, 6, 7]

    def test_dsl_roundtrip(self):
        recipe = FeatureRecipe.parse(SMALL_RECIPE)
        again = FeatureRecipe.parse(recipe.render())
        assert again.entries == recipe.entries

    def test_hist_expands_to_five(self):
        recipe = FeatureRecipe.parse("SA@2:hist")
        assert len(recipe.entries) == 5

    def test_caps(self):
        with pytest.raises(ValueError):
            FeatureRecipe.parse("SA@32:raw")
        with pytest.raises(ValueError):
            FeatureRecipe.parse("SA@256:hist50")
        with pytest.raises(ValueError):
            FeatureRecipe.parse("SA@3:raw")
        with pytest.raises(ValueError):
            FeatureRecipe.parse("SA@2:!")

    def test_bool_available_for_explicit_recipes(self):
        recipe = FeatureRecipe.parse("Bool@4:raw")
        assert len(recipe.columns()) == 64


class TestExtract:
    def test_ev_raw_equals_global_eigenvalues(self, ico2):
        row = extract_object(ico2, FeatureRecipe.parse("EV@1:raw"))
        from geovox.mesh import normalize_to_unit_cube

        norm, _ = normalize_to_unit_cube(ico2)
        ev = compute_grid(norm, 0, [FeatureKind.EV])[FeatureKind.EV].values[0]
        np.testing.assert_allclose(row, ev, rtol=1e-12)

    def test_sa_raw_icosphere_with_identity_margin(self):
        # margin 0.1 makes normalization the identity for this sphere, so
        # the single SA column is the total tessellated area ~ 4 pi 0.4^2
        ico = shapes.icosphere(0.4, 4, center=(0.5, 0.5, 0.5))
        row = extract_object(ico, FeatureRecipe.parse("SA@1:raw"), margin=0.1)
        assert row[0] == pytest.approx(4 * np.pi * 0.4**2, rel=0.01)
        assert row[0] == pytest.approx(ico.total_area, rel=1e-9)

    def test_vad_percentile_on_grid_aligned_cube(self, cube):
        row = extract_object(cube, FeatureRecipe.parse("VAD@2:hist100"))
        assert row[0] == pytest.approx(np.pi / 2, abs=1e-12)

    def test_consistency_gate(self):
        soup = TriangleMesh(
            [[0.1, 0.1, 0.1], [0.9, 0.1, 0.1], [0.1, 0.9, 0.1]], [[0, 1, 2]]
        )
        with pytest.raises(ConsistencyRequired):
            extract_object(soup, FeatureRecipe.parse("VAD@2:hist100"))
        row = extract_object(soup, FeatureRecipe.parse("SA@1:raw"))
        assert row.shape == (1,)


def write_dataset(tmp_path, n_objects=3, broken=0):
    rows = ["path,label,split"]
    rng = np.random.default_rng(0)
    for i in range(n_objects):
        which = i % 2
        if which == 0:
            mesh = shapes.box((1.0, 0.5 + 0.1 * i, 0.4))
            label = "box"
        else:
            mesh = shapes.icosphere(0.4, 1)
            label = "sphere"
        path = tmp_path / f"obj{i}.obj"
        save_mesh(mesh, path)
        # last object is test, provided its label also occurs in train
        split = "test" if i == n_objects - 1 and i >= 2 else "train"
        rows.append(f"obj{i}.obj,{label},{split}")
    for i in range(broken):
        path = tmp_path / f"broken{i}.obj"
        path.write_text("not a mesh\nf 1 2 9\n")
        rows.append(f"broken{i}.obj,box,train")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


class TestManifest:
    def test_roundtrip(self, tmp_path):
        manifest = write_dataset(tmp_path, 4)
        rows = read_manifest(manifest)
        assert len(rows) == 4
        assert rows[0].path.exists()

    def test_unknown_test_label(self, tmp_path):
        path = tmp_path / "m.csv"
        (tmp_path / "a.obj").write_text("")
        path.write_text("path,label,split\na.obj,box,train\na.obj,widget,test\n")
        with pytest.raises(ManifestError, match="widget"):
            read_manifest(path)

    def test_bad_split(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("path,label,split\na.obj,box,validation\n")
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("file,cls\na.obj,box\n")
        with pytest.raises(ManifestError):
            read_manifest(path)


class TestBuildMatrix:
    def test_rows_objects_times_rotations(self, tmp_path):
        manifest = write_dataset(tmp_path, 3)
        recipe = FeatureRecipe.parse(SMALL_RECIPE, rotations=20, seed=1)
        matrix = build_matrix(manifest, recipe)
        assert matrix.n_rows == 60
        assert matrix.values.shape[1] == len(recipe.columns())
        assert set(matrix.label_names) == {"box", "sphere"}
        assert len(matrix.split_rows("test")) == 20

    def test_deterministic(self, tmp_path):
        manifest = write_dataset(tmp_path, 2)
        recipe = FeatureRecipe.parse(SMALL_RECIPE, rotations=3, seed=5)
        a = build_matrix(manifest, recipe)
        b = build_matrix(manifest, recipe)
        assert a.values.tobytes() == b.values.tobytes()

    def test_parallel_matches_serial(self, tmp_path):
        manifest = write_dataset(tmp_path, 3)
        recipe = FeatureRecipe.parse(SMALL_RECIPE, rotations=2, seed=5)
        a = build_matrix(manifest, recipe, threads=1)
        b = build_matrix(manifest, recipe, threads=2)
        assert a.values.tobytes() == b.values.tobytes()

    def test_failures_skipped_and_recorded(self, tmp_path):
        manifest = write_dataset(tmp_path, 10, broken=1)
        recipe = FeatureRecipe.parse("SA@1:raw", rotations=2, seed=0)
        matrix = build_matrix(manifest, recipe)
        assert matrix.n_rows == 20
        assert len(matrix.failures) == 1

    def test_too_many_failures_abort(self, tmp_path):
        manifest = write_dataset(tmp_path, 3, broken=2)
        recipe = FeatureRecipe.parse("SA@1:raw", rotations=1, seed=0)
        with pytest.raises(ExtractionError):
            build_matrix(manifest, recipe)

    def test_rotation_invariant_column_agrees_across_rotations(self, tmp_path):
        manifest = write_dataset(tmp_path, 1)
        recipe = FeatureRecipe.parse("VAD@1:raw", rotations=20, seed=3)
        matrix = build_matrix(manifest, recipe)
        col = matrix.values[:, 0]
        assert np.abs(col - col[0]).max() < 1e-9
        assert col[0] == pytest.approx(4 * np.pi, abs=1e-9)


class TestMatrixIO:
    def make(self, tmp_path):
        manifest = write_dataset(tmp_path, 2)
        recipe = FeatureRecipe.parse(SMALL_RECIPE, rotations=2, seed=2)
        return build_matrix(manifest, recipe)

    def test_binary_bitexact(self, tmp_path):
        matrix = self.make(tmp_path)
        path = tmp_path / "m.vxm"
        save_matrix(matrix, path)
        back = load_matrix(path)
        assert back.values.tobytes() == matrix.values.tobytes()
        assert back.column_names == matrix.column_names
        assert back.object_ids == matrix.object_ids
        assert back.labels == matrix.labels
        assert back.splits == matrix.splits
        assert back.label_names == matrix.label_names
        np.testing.assert_array_equal(back.rotations, matrix.rotations)

    def test_csv_roundtrip(self, tmp_path):
        matrix = self.make(tmp_path)
        path = tmp_path / "m.csv"
        save_matrix(matrix, path, format="csv")
        back = load_matrix(path)
        np.testing.assert_array_equal(back.values, matrix.values)
        assert back.column_names == matrix.column_names

    def test_csv_header_contract(self, tmp_path, ico2):
        recipe = FeatureRecipe.parse("EV@1:raw", rotations=1)
        row = extract_object(ico2, recipe)
        matrix = FeatureMatrix(
            recipe.columns(), row[None, :], ["obj"], ["sphere"],
            np.array([0]), ["train"], ("sphere",),
        )
        path = tmp_path / "m.csv"
        save_matrix(matrix, path, format="csv")
        header = path.read_text().splitlines()[0]
        assert header.startswith("[1][EV][0],")

    def test_truncated_binary_never_partial(self, tmp_path):
        matrix = self.make(tmp_path)
        path = tmp_path / "m.vxm"
        save_matrix(matrix, path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(FileFormatError):
            load_matrix(path)


class TestTransformer:
    def test_sklearn_contract(self, tmp_path):
        from sklearn.base import clone

        tr = VoxelFeatureTransformer(recipe="EV@1:raw,SA@1:raw")
        assert clone(tr).get_params()["recipe"] == "EV@1:raw,SA@1:raw"
        meshes = [shapes.unit_cube(), shapes.icosphere(0.4, 1)]
        out = tr.fit_transform(meshes)
        assert out.shape == (2, 4)
        names = tr.get_feature_names_out()
        assert list(names) == ["[1][SA]", "[1][EV][0]", "[1][EV][1]", "[1][EV][2]"]

    def test_accepts_paths(self, tmp_path):
        path = tmp_path / "cube.obj"
        save_mesh(shapes.unit_cube(), path)
        out = VoxelFeatureTransformer(recipe="SA@1:raw").fit_transform([path])
        assert out[0, 0] == pytest.approx(6.0, abs=1e-9)
