"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The end-to-end
classification criteria (7 and 9) share one synthetic corpus and feature
matrix via a module-scoped fixture; the real-dataset replication (8) needs
the Engineering Shape Benchmark on disk and is skipped unless
``GEOVOX_ESB_DIR`` points at it.
"""

import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from geovox import shapes
from geovox.aggregate import haar_matrix, haar_transform, inverse_haar_transform
from geovox.classify import BoostParams, evaluate, fit_ensemble, train
from geovox.features import FeatureKind, compute_grid, compute_grid_stack
from geovox.mesh import normalize_to_unit_cube
from geovox.pipeline import FeatureRecipe, build_matrix
from test_classify import brute_force_first_split

ADDITIVE = [k for k in FeatureKind if k.additive]
GLOBAL_KINDS = [FeatureKind.SA, FeatureKind.AN, FeatureKind.VAD,
                FeatureKind.EAD, FeatureKind.VE]

N_WORKERS = min(2, os.cpu_count() or 1)


def report(criterion: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion} {status}: {description} {detail}".rstrip())
    assert ok, f"criterion {criterion}: {description} {detail}"


@pytest.fixture(scope="module")
def test_meshes():
    return {
        "cube": shapes.unit_cube(),
        "icosphere": shapes.icosphere(0.4, 4, center=(0.5, 0.5, 0.5)),
        "lbracket": normalize_to_unit_cube(shapes.l_bracket())[0],
        "torus": normalize_to_unit_cube(shapes.torus())[0],
        "cylinder": normalize_to_unit_cube(shapes.cylinder(0.3, 0.8, 20))[0],
    }


def test_criterion_1_cube_intrinsic_totals(cube):
    start = time.perf_counter()
    stack = compute_grid_stack(cube, range(6), GLOBAL_KINDS)
    expected = {
        FeatureKind.SA: 6.0,
        FeatureKind.VAD: 4 * np.pi,
        FeatureKind.EAD: 6 * np.pi,
        FeatureKind.VE: 1.0,
    }
    worst = 0.0
    for level in range(6):
        for kind, target in expected.items():
            worst = max(worst, abs(stack[level][kind].values.sum() - target))
        an = stack[level][FeatureKind.AN].values.sum(axis=0)
        worst = max(worst, np.abs(an).max())
    elapsed = time.perf_counter() - start
    report(
        1,
        "cube intrinsic totals at n=0..5 within 1e-9",
        worst < 1e-9 and elapsed < 1.0,
        f"(max deviation {worst:.2e}, {elapsed:.2f}s)",
    )


def test_criterion_2_sphere_convergence(ico4):
    r = 0.4
    start = time.perf_counter()
    grids = compute_grid(
        ico4, 6, [FeatureKind.SA, FeatureKind.VE, FeatureKind.EAD, FeatureKind.VAD]
    )
    elapsed = time.perf_counter() - start
    sa = grids[FeatureKind.SA].values.sum()
    ve = grids[FeatureKind.VE].values.sum()
    ead = grids[FeatureKind.EAD].values.sum()
    vad = grids[FeatureKind.VAD].values.sum()
    checks = {
        "SA within 1%": abs(sa - 4 * np.pi * r**2) < 0.01 * 4 * np.pi * r**2,
        "VE within 2%": abs(ve - 4 / 3 * np.pi * r**3) < 0.02 * 4 / 3 * np.pi * r**3,
        "EAD within 2%": abs(ead - 8 * np.pi * r) < 0.02 * 8 * np.pi * r,
        "VAD exact": abs(vad - 4 * np.pi) < 1e-9,
        "runtime < 5s": elapsed < 5.0,
    }
    report(
        2,
        "icosphere integral convergence at n=6",
        all(checks.values()),
        f"({', '.join(k for k, v in checks.items() if not v) or 'all'}; {elapsed:.2f}s)",
    )


def test_criterion_3_additivity_across_scales(test_meshes):
    worst = 0.0
    for name in ("cube", "icosphere", "lbracket"):
        mesh = test_meshes[name]
        per_level = {
            level: compute_grid(mesh, level, ADDITIVE) for level in range(7)
        }
        for level in range(1, 7):
            for kind in ADDITIVE:
                merged = per_level[level][kind].merge_to_parent()
                direct = per_level[level - 1][kind]
                assert np.array_equal(merged.keys, direct.keys)
                # relative to the summed child magnitudes: a cancelled parent
                # total (e.g. AN of a closed surface) is legitimately ~0
                scale = max(
                    np.abs(per_level[level][kind].values).max(),
                    np.abs(direct.values).max(),
                    1e-30,
                )
                err = np.abs(merged.values - direct.values).max() / scale
                worst = max(worst, err)
    report(
        3,
        "parent-merge equals direct coarser grids (additive kinds, n<=6)",
        worst < 1e-9,
        f"(worst relative deviation {worst:.2e})",
    )


def test_criterion_4_trace_identity(test_meshes):
    worst = 0.0
    for mesh in test_meshes.values():
        for level in (0, 2, 4):
            grids = compute_grid(mesh, level, [FeatureKind.SA, FeatureKind.QF])
            sa = grids[FeatureKind.SA].values[:, 0]
            trace = grids[FeatureKind.QF].values[:, :3].sum(axis=1)
            worst = max(worst, np.abs(sa - trace).max())
    report(4, "per-voxel QF trace equals SA within 1e-12", worst < 1e-12,
           f"(worst {worst:.2e})")


def test_criterion_5_haar(ico4):
    ortho = max(
        np.abs(haar_matrix(n) @ haar_matrix(n).T - np.eye(1 << n)).max()
        for n in range(8)
    )
    grid = compute_grid(ico4, 4, [FeatureKind.SA])[FeatureKind.SA]
    coeffs = haar_transform(grid)
    dense = grid.to_dense()[..., 0]
    recon = np.abs(inverse_haar_transform(coeffs) - dense).max()
    raw_norm = np.sqrt((dense**2).sum())
    parseval = abs(coeffs.l2_norm - raw_norm) / raw_norm
    ok = ortho < 1e-12 and recon < 1e-9 and parseval < 1e-9
    report(
        5,
        "haar orthogonality / reconstruction / Parseval",
        ok,
        f"(ortho {ortho:.2e}, recon {recon:.2e}, parseval {parseval:.2e})",
    )


def test_criterion_6_boosting_oracle():
    mismatches = []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(8, 65))
        c = int(rng.integers(1, 9))
        k = int(rng.integers(2, 5))
        X = np.round(rng.normal(size=(n, c)), 2)
        y = rng.integers(0, k, n)
        while len(np.unique(y)) < 2:
            y = rng.integers(0, k, n)
        params = BoostParams(max_depth=1, rounds=1)
        tree = fit_ensemble(X, y, k, params).trees[0][0]
        expected = brute_force_first_split(X, y, k, params)
        if expected is None:
            if tree.feature[0] != -1:
                mismatches.append(seed)
        elif (int(tree.feature[0]), float(tree.threshold[0])) != (
            expected[1], expected[2],
        ):
            mismatches.append(seed)
    report(
        6,
        "first depth-1 split matches exhaustive search on 20 datasets",
        not mismatches,
        f"(mismatched seeds: {mismatches})" if mismatches else "",
    )


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    """Shared corpus (300 meshes), matrix and timing for criteria 7 and 9."""
    tmp = tmp_path_factory.mktemp("synthetic")
    start = time.perf_counter()
    manifest = shapes.make_synthetic_dataset(tmp, n_per_class=100, seed=42)
    recipe = FeatureRecipe.default(rotations=20, seed=42)
    matrix = build_matrix(manifest, recipe, threads=N_WORKERS)
    extract_seconds = time.perf_counter() - start
    return matrix, extract_seconds


def test_criterion_7_synthetic_end_to_end(synthetic_run):
    matrix, extract_seconds = synthetic_run
    start = time.perf_counter()
    ensemble = train(matrix, BoostParams(max_depth=2, rounds=15, seed=0))
    rep = evaluate(ensemble, matrix, symmetrize=True)
    total = extract_seconds + time.perf_counter() - start
    accuracy = 1.0 - rep.error_rate
    report(
        7,
        "synthetic 3-class task: symmetrized accuracy >= 0.95 in < 10 min",
        accuracy >= 0.95 and total < 600.0,
        f"(accuracy {accuracy:.4f}, {total:.0f}s total)",
    )


def test_criterion_9_symmetrization_benefit(synthetic_run):
    matrix, _ = synthetic_run
    objects = sorted(set(matrix.object_ids))
    labels = {o: l for o, l in zip(matrix.object_ids, matrix.labels)}
    sym_errors, plain_errors = [], []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        test_objects = set()
        for label in matrix.label_names:
            members = [o for o in objects if labels[o] == label]
            picked = rng.permutation(len(members))[: int(0.3 * len(members))]
            test_objects.update(members[i] for i in picked)
        resplit = replace(
            matrix,
            splits=["test" if o in test_objects else "train"
                    for o in matrix.object_ids],
        )
        # few rounds: a deliberately under-trained classifier makes the
        # rotation-averaging benefit visible rather than trivially 0 <= 0
        ensemble = train(resplit, BoostParams(max_depth=2, rounds=5, seed=seed))
        sym_errors.append(evaluate(ensemble, resplit, symmetrize=True).error_rate)
        plain_errors.append(evaluate(ensemble, resplit, symmetrize=False).error_rate)
    mean_sym = float(np.mean(sym_errors))
    mean_plain = float(np.mean(plain_errors))
    report(
        9,
        "mean symmetrized test error <= mean non-symmetrized (5 seeds)",
        mean_sym <= mean_plain,
        f"(symmetrized {mean_sym:.4f} vs per-rotation {mean_plain:.4f})",
    )


# ---------------------------------------------------------------------------
# Criterion 8: data-dependent ESB replication


def esb_manifest(esb_dir: Path, out: Path, seed: int = 0):
    """Stratified 675/191 split over the user-supplied ESB tree.

    Expects class directories (any nesting) holding mesh files; the class
    is the innermost directory name.
    """
    meshes = []
    for ext in ("*.obj", "*.stl", "*.off", "*.OBJ", "*.STL", "*.OFF"):
        meshes.extend(esb_dir.rglob(ext))
    by_class: dict[str, list[Path]] = {}
    for path in sorted(meshes):
        by_class.setdefault(path.parent.name, []).append(path)
    total = sum(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    test_share = 191 / 866
    rows = ["path,label,split"]
    for label, members in sorted(by_class.items()):
        order = rng.permutation(len(members))
        n_test = int(round(test_share * len(members)))
        test_idx = set(order[:n_test].tolist())
        for i, path in enumerate(members):
            split = "test" if i in test_idx and len(members) > 1 else "train"
            rows.append(f"{os.path.relpath(path, out.parent)},{label},{split}")
    out.write_text("\n".join(rows) + "\n")
    return out, total


@pytest.mark.skipif(
    "GEOVOX_ESB_DIR" not in os.environ,
    reason="ESB dataset not redistributed; set GEOVOX_ESB_DIR to run",
)
def test_criterion_8_esb_replication(tmp_path):
    esb_dir = Path(os.environ["GEOVOX_ESB_DIR"])
    manifest, total = esb_manifest(esb_dir, tmp_path / "esb_manifest.csv")
    recipe = FeatureRecipe.default(rotations=20, seed=0)
    matrix = build_matrix(manifest, recipe, threads=N_WORKERS)
    ensemble = train(matrix, BoostParams(max_depth=2, rounds=200, seed=0))
    rep = evaluate(ensemble, matrix, symmetrize=True)
    report(
        8,
        "ESB symmetrized test error <= 0.20 with depth-2 trees",
        rep.error_rate <= 0.20,
        f"(error {rep.error_rate:.4f} over {rep.n_evaluated} objects)",
    )
    # Fig. 2a qualitative ordering at depth 6: EV beats Bool at 4..16 and
    # EV beats QF at the trivial resolution.
    def single_feature_error(spec: str) -> float:
        r = FeatureRecipe.parse(spec, rotations=20, seed=0)
        m = build_matrix(manifest, r, threads=N_WORKERS)
        ens = train(m, BoostParams(max_depth=6, rounds=60, seed=0))
        return evaluate(ens, m, symmetrize=True).error_rate

    ok = True
    detail = []
    for n in (4, 16):
        ev_err = single_feature_error(f"EV@{n}:raw")
        bool_err = single_feature_error(f"Bool@{n}:raw")
        detail.append(f"EV@{n} {ev_err:.3f} vs Bool@{n} {bool_err:.3f}")
        ok = ok and ev_err < bool_err
    ev1 = single_feature_error("EV@1:raw")
    qf1 = single_feature_error("QF@1:raw")
    detail.append(f"EV@1 {ev1:.3f} vs QF@1 {qf1:.3f}")
    ok = ok and ev1 < qf1
    report(8, "Fig-2a-style depth-6 orderings (EV vs Bool, EV vs QF)", ok,
           f"({'; '.join(detail)})")


def test_criterion_10_binding_parity_note():
    pytest.skip(
        "criterion 10 (binding parity) is exercised by the TypeScript "
        "package's test suite under frontend/"
    )
