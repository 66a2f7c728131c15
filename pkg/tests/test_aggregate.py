import numpy as np
import pytest

from geovox.aggregate import (
    haar_matrix,
    haar_transform,
    inverse_haar_transform,
    percentile_summary,
    scale_of_index,
)
from geovox.errors import ResolutionTooHigh
from geovox.features import FeatureKind, compute_grid
from geovox.voxelize import VoxelGrid


class TestHaarMatrix:
    def test_level0(self):
        np.testing.assert_array_equal(haar_matrix(0), [[1.0]])

    def test_level1(self):
        expected = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        np.testing.assert_allclose(haar_matrix(1), expected, atol=1e-15)

    def test_level2_row3(self):
        h = haar_matrix(2)
        np.testing.assert_allclose(
            h[2], np.array([1, -1, 0, 0]) / np.sqrt(2), atol=1e-15
        )

    def test_level2_full(self):
        expected = np.array(
            [
                [0.5, 0.5, 0.5, 0.5],
                [0.5, 0.5, -0.5, -0.5],
                [1 / np.sqrt(2), -1 / np.sqrt(2), 0, 0],
                [0, 0, 1 / np.sqrt(2), -1 / np.sqrt(2)],
            ]
        )
        np.testing.assert_allclose(haar_matrix(2), expected, atol=1e-15)

    @pytest.mark.parametrize("level", range(8))
    def test_orthogonality(self, level):
        h = haar_matrix(level)
        err = np.abs(h @ h.T - np.eye(1 << level)).max()
        assert err < 1e-12

    def test_scale_of_index(self):
        assert scale_of_index(0) == -1
        assert [scale_of_index(k) for k in (1, 2, 3, 4, 7)] == [0, 1, 1, 2, 2]


class TestHaarTransform:
    def test_constant_grid_dc_only(self):
        keys = [(i, j, k) for i in range(2) for j in range(2) for k in range(2)]
        grid = VoxelGrid(1, keys, np.full((8, 1), 3.0))
        coeffs = haar_transform(grid)
        assert coeffs.values[0, 0, 0] == pytest.approx(2**1.5 * 3.0)
        rest = coeffs.values.copy()
        rest[0, 0, 0] = 0.0
        np.testing.assert_allclose(rest, 0.0, atol=1e-12)

    def test_single_voxel_l2(self):
        grid = VoxelGrid(2, [(1, 2, 3)], [[-2.5]])
        coeffs = haar_transform(grid)
        assert coeffs.l2_norm == pytest.approx(2.5, rel=1e-12)

    def test_roundtrip_icosphere(self, ico4):
        grid = compute_grid(ico4, 4, [FeatureKind.SA])[FeatureKind.SA]
        coeffs = haar_transform(grid, component=0)
        dense = grid.to_dense()[..., 0]
        back = inverse_haar_transform(coeffs)
        assert np.abs(back - dense).max() < 1e-9

    def test_parseval(self, ico4):
        grid = compute_grid(ico4, 4, [FeatureKind.SA])[FeatureKind.SA]
        coeffs = haar_transform(grid)
        raw = np.sqrt((grid.to_dense() ** 2).sum())
        assert coeffs.l2_norm == pytest.approx(raw, rel=1e-9)

    def test_tensor_product_oracle(self):
        # separable application must equal the explicit kron operator
        rng = np.random.default_rng(5)
        n = 4
        dense = rng.normal(size=(n, n, n))
        keys = [(i, j, k) for i in range(n) for j in range(n) for k in range(n)]
        grid = VoxelGrid(2, keys, dense.reshape(-1, 1))
        coeffs = haar_transform(grid)
        h = haar_matrix(2)
        full = np.kron(np.kron(h, h), h) @ dense.ravel()
        np.testing.assert_allclose(coeffs.values.ravel(), full, atol=1e-12)

    def test_scale_index_lookup(self):
        grid = VoxelGrid(2, [(0, 0, 0)], [[1.0]])
        coeffs = haar_transform(grid)
        assert coeffs.scale_index(0, 1, 3) == (-1, 0, 1)

    def test_level_cap(self):
        grid = VoxelGrid(8, [(0, 0, 0)], [[1.0]])
        with pytest.raises(ResolutionTooHigh):
            haar_transform(grid)


class TestPercentiles:
    def test_cube_sa_constant(self, cube):
        grid = compute_grid(cube, 1, [FeatureKind.SA])[FeatureKind.SA]
        summary = percentile_summary(grid)
        assert not summary.is_empty
        for p in (0, 25, 50, 75, 100):
            assert summary[p] == pytest.approx(0.75, abs=1e-12)

    def test_linear_interpolation(self):
        grid = VoxelGrid(1, [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)],
                         [[1.0], [2.0], [3.0], [4.0]])
        s = percentile_summary(grid)
        assert s[0] == 1.0 and s[100] == 4.0
        assert s[50] == pytest.approx(2.5)

    def test_icosphere_ead_bounds(self, ico4):
        grid = compute_grid(ico4, 5, [FeatureKind.EAD])[FeatureKind.EAD]
        s = percentile_summary(grid)
        assert s[0] >= 0.0
        assert s[100] <= grid.values.sum()

    def test_empty_grid_flagged(self):
        grid = VoxelGrid(2, np.empty((0, 3)), np.empty((0, 1)), kind="SA")
        s = percentile_summary(grid)
        assert s.is_empty
        assert all(v == 0.0 for v in s.percentiles.values())

    def test_monotone_and_endpoints(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            m = rng.integers(1, 40)
            vals = rng.normal(size=(m, 1))
            keys = np.argwhere(np.ones((8, 8, 8)))[:m]
            grid = VoxelGrid(3, keys, vals)
            s = percentile_summary(grid)
            seq = [s[p] for p in (0, 25, 50, 75, 100)]
            assert all(a <= b + 1e-15 for a, b in zip(seq, seq[1:]))
            assert s[0] == pytest.approx(vals.min())
            assert s[100] == pytest.approx(vals.max())

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        vals = rng.normal(size=(30, 1))
        keys = np.argwhere(np.ones((4, 4, 4)))[:30]
        a = percentile_summary(VoxelGrid(2, keys, vals))
        perm = rng.permutation(30)
        b = percentile_summary(VoxelGrid(2, keys[perm], vals[perm]))
        assert a.percentiles == b.percentiles

    def test_bad_percentile_rejected(self):
        grid = VoxelGrid(0, [(0, 0, 0)], [[1.0]])
        with pytest.raises(ValueError):
            percentile_summary(grid, percentiles=[0, 120])
