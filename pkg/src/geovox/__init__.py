"""Sparse integral-geometric voxel features for CAD surfaces.

The package turns triangle meshes into sparse per-voxel geometric features
(surface area, normal moments, discrete curvature integrals, volume
elements), aggregates them across dyadic length scales (raw grids, Haar
coefficients, percentiles) and trains shallow gradient-boosted trees on the
result. See the README for the CLI workflow.
"""

from .aggregate import (
    HaarCoefficients,
    PercentileSummary,
    haar_matrix,
    haar_transform,
    inverse_haar_transform,
    percentile_summary,
)
from .errors import (
    ColumnMismatch,
    ConsistencyRequired,
    DegenerateData,
    DegenerateExtent,
    EmptyMesh,
    ExtractionError,
    FileFormatError,
    GeovoxError,
    ManifestError,
    MeshOutOfBounds,
    ParseError,
    ResolutionTooHigh,
    VersionMismatch,
)
from .features import (
    FeatureKind,
    FeatureValue,
    compute_grid,
    compute_grid_stack,
    feature_an,
    feature_bool,
    feature_ead,
    feature_ev,
    feature_qf,
    feature_sa,
    feature_vad,
    feature_ve,
)
from .mesh import (
    ConsistencyReport,
    Transform,
    TriangleMesh,
    apply_transform,
    check_consistency,
    load_mesh,
    normalize_to_unit_cube,
    sample_rotations,
    save_mesh,
)
from .voxelize import (
    ClippedCell,
    ClippedPolygon,
    VoxelGrid,
    cell_count,
    load_grid,
    occupancy,
    octree_clip,
    save_grid,
)

__version__ = "0.1.0"

from .classify import (  # noqa: E402 - depends on errors above
    BoostParams,
    DecisionTree,
    EvalReport,
    GradientBoostedTrees,
    ImportanceReport,
    TreeEnsemble,
    evaluate,
    fit_ensemble,
    importance,
    predict,
    predict_symmetrized,
    train,
)
from .pipeline import (  # noqa: E402
    FeatureDescriptor,
    FeatureMatrix,
    FeatureRecipe,
    ManifestRow,
    RecipeEntry,
    VoxelFeatureTransformer,
    build_matrix,
    extract_object,
    load_matrix,
    read_manifest,
    save_matrix,
)
