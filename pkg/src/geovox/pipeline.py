"""Feature-matrix assembly: recipes, per-object extraction, persistence.

A :class:`FeatureRecipe` names which (kind, resolution, aggregation)
columns to produce; :func:`extract_object` applies one rotation, renormalizes
to the unit cube, clips once at the finest requested resolution and emits
every column in canonical order. :func:`build_matrix` runs that over a
dataset manifest with rotation augmentation (train and test rows both carry
every rotation; test-side symmetrization happens at prediction time).

Column names follow ``[Resolution][Kind][histP][Component][i,j,k]`` where the
``hist`` part is present only for percentile columns, the component only for
vector-valued kinds (AN, QF, EV) and the voxel index only for raw columns at
resolution > 1. Canonical column order is (resolution, kind, aggregation,
component, voxel key), with raw preceding percentiles.
"""

from __future__ import annotations

import csv
import re
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .aggregate import DEFAULT_PERCENTILES, linear_percentiles
from .errors import (
    ConsistencyRequired,
    ExtractionError,
    FileFormatError,
    GeovoxError,
    ManifestError,
    VersionMismatch,
)
from .features import FeatureKind, compute_grid_stack
from .mesh import Transform, TriangleMesh, apply_transform, load_mesh, normalize_to_unit_cube, sample_rotations

MATRIX_MAGIC = b"VXFM"
MATRIX_VERSION = 1

MAX_RAW_RESOLUTION = 16
MAX_PERCENTILE_RESOLUTION = 128

_VECTOR_KINDS = {FeatureKind.AN, FeatureKind.QF, FeatureKind.EV}

_NAME_RE = re.compile(r"\[([^\[\]]*)\]")


@dataclass(frozen=True)
class FeatureDescriptor:
    """One scalar column of the assembled feature matrix."""

    resolution: int
    kind: FeatureKind
    percentile: int | None = None  # None means a raw column
    component: int | None = None  # only for AN / QF / EV
    voxel: tuple[int, int, int] | None = None  # only raw at resolution > 1

    @property
    def is_raw(self) -> bool:
        return self.percentile is None

    @property
    def name(self) -> str:
        parts = [f"[{self.resolution}]", f"[{self.kind.label}]"]
        if self.percentile is not None:
            parts.append(f"[hist{self.percentile}]")
        if self.component is not None:
            parts.append(f"[{self.component}]")
        if self.voxel is not None:
            parts.append("[{},{},{}]".format(*self.voxel))
        return "".join(parts)

    @classmethod
    def parse(cls, name: str) -> "FeatureDescriptor":
        tokens = _NAME_RE.findall(name)
        if len(tokens) < 2 or "".join(f"[{t}]" for t in tokens) != name:
            raise ValueError(f"not a canonical column name: {name!r}")
        resolution = int(tokens[0])
        kind = FeatureKind.from_name(tokens[1])
        percentile = None
        component = None
        voxel = None
        for tok in tokens[2:]:
            if tok.startswith("hist"):
                percentile = int(tok[4:])
            elif "," in tok:
                i, j, k = (int(x) for x in tok.split(","))
                voxel = (i, j, k)
            else:
                component = int(tok)
        return cls(resolution, kind, percentile, component, voxel)

    def sort_key(self):
        return (
            self.resolution,
            list(FeatureKind).index(self.kind),
            -1 if self.percentile is None else self.percentile,
            -1 if self.component is None else self.component,
            self.voxel if self.voxel is not None else (-1, -1, -1),
        )


@dataclass(frozen=True)
class RecipeEntry:
    kind: FeatureKind
    resolution: int
    percentile: int | None = None  # None = raw

    @property
    def level(self) -> int:
        return int(self.resolution).bit_length() - 1

    def render(self) -> str:
        agg = "raw" if self.percentile is None else f"hist{self.percentile}"
        return f"{self.kind.label}@{self.resolution}:{agg}"


_NON_BOOL = tuple(k for k in FeatureKind if k is not FeatureKind.BOOL)


@dataclass(frozen=True)
class FeatureRecipe:
    """Which feature columns to extract, plus the augmentation parameters."""

    entries: tuple[RecipeEntry, ...]
    rotations: int = 20
    seed: int = 0
    include_reflections: bool = False
    max_raw_resolution: int = MAX_RAW_RESOLUTION
    max_percentile_resolution: int = MAX_PERCENTILE_RESOLUTION

    def __post_init__(self):
        entries = tuple(sorted(set(self.entries), key=lambda e: (
            e.resolution,
            list(FeatureKind).index(e.kind),
            -1 if e.percentile is None else e.percentile,
        )))
        object.__setattr__(self, "entries", entries)
        if self.rotations < 1:
            raise ValueError("rotations must be >= 1")
        for e in entries:
            n = e.resolution
            if n < 1 or (n & (n - 1)) != 0:
                raise ValueError(f"resolution {n} is not a power of two")
            if e.percentile is None and n > self.max_raw_resolution:
                raise ValueError(
                    f"raw resolution {n} exceeds the cap "
                    f"{self.max_raw_resolution}"
                )
            if e.percentile is not None and n > self.max_percentile_resolution:
                raise ValueError(
                    f"percentile resolution {n} exceeds the cap "
                    f"{self.max_percentile_resolution}"
                )
            if e.percentile is not None and not 0 <= e.percentile <= 100:
                raise ValueError(f"percentile {e.percentile} outside [0, 100]")

    @classmethod
    def default(
        cls, rotations: int = 20, seed: int = 0, include_reflections: bool = False
    ) -> "FeatureRecipe":
        """Raw non-Bool features at 1/2/4 plus their percentiles at 2..128."""
        entries = []
        for kind in _NON_BOOL:
            for n in (1, 2, 4):
                entries.append(RecipeEntry(kind, n))
            for n in (2, 4, 8, 16, 32, 64, 128):
                for p in DEFAULT_PERCENTILES:
                    entries.append(RecipeEntry(kind, n, p))
        return cls(tuple(entries), rotations, seed, include_reflections)

    @classmethod
    def parse(cls, text: str, **kwargs) -> "FeatureRecipe":
        """Parse the entry DSL, e.g. ``"EV@1:raw,VAD@32:hist25"``.

        ``hist`` without a number expands to the five standard percentiles;
        the single word ``default`` yields :meth:`default`.
        """
        text = text.strip()
        if text == "default":
            return cls.default(**kwargs)
        entries = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            m = re.fullmatch(r"(\w+)@(\d+):(raw|hist(\d+)?)", chunk)
            if not m:
                raise ValueError(
                    f"bad recipe entry {chunk!r}; expected KIND@RES:raw, "
                    "KIND@RES:histP or KIND@RES:hist"
                )
            kind = FeatureKind.from_name(m.group(1))
            res = int(m.group(2))
            if m.group(3) == "raw":
                entries.append(RecipeEntry(kind, res))
            elif m.group(4) is not None:
                entries.append(RecipeEntry(kind, res, int(m.group(4))))
            else:
                entries.extend(RecipeEntry(kind, res, p) for p in DEFAULT_PERCENTILES)
        if not entries:
            raise ValueError("recipe has no entries")
        return cls(tuple(entries), **kwargs)

    def render(self) -> str:
        return ",".join(e.render() for e in self.entries)

    @property
    def kinds(self) -> list[FeatureKind]:
        seen = []
        for e in self.entries:
            if e.kind not in seen:
                seen.append(e.kind)
        return sorted(seen, key=lambda k: list(FeatureKind).index(k))

    @property
    def levels(self) -> list[int]:
        return sorted({e.level for e in self.entries})

    @property
    def needs_consistency(self) -> bool:
        return any(k.requires_consistency for k in self.kinds)

    def columns(self) -> list[FeatureDescriptor]:
        """Expanded per-column descriptors in canonical order (cached)."""
        cached = self.__dict__.get("_columns")
        if cached is not None:
            return cached
        out = []
        for e in self.entries:
            comps = range(e.kind.dimension) if e.kind in _VECTOR_KINDS else (None,)
            if e.percentile is None:
                n = e.resolution
                for comp in comps:
                    if n == 1:
                        out.append(FeatureDescriptor(n, e.kind, None, comp, None))
                    else:
                        for i in range(n):
                            for j in range(n):
                                for k in range(n):
                                    out.append(
                                        FeatureDescriptor(
                                            n, e.kind, None, comp, (i, j, k)
                                        )
                                    )
            else:
                for comp in comps:
                    out.append(FeatureDescriptor(e.resolution, e.kind, e.percentile, comp))
        out = sorted(out, key=FeatureDescriptor.sort_key)
        self.__dict__["_columns"] = out
        return out


def extract_object(
    mesh: TriangleMesh,
    recipe: FeatureRecipe,
    rotation: Transform | None = None,
    margin: float = 0.0,
) -> np.ndarray:
    """One feature row: rotate, renormalize, clip once, emit all columns."""
    if recipe.needs_consistency and not mesh.is_consistent:
        raise ConsistencyRequired(
            [k for k in recipe.kinds if k.requires_consistency]
        )
    if rotation is not None:
        mesh = apply_transform(mesh, rotation)
    mesh, _ = normalize_to_unit_cube(mesh, margin)
    stack = compute_grid_stack(mesh, recipe.levels, recipe.kinds)
    dense_cache: dict[tuple[int, FeatureKind], np.ndarray] = {}
    pct_cache: dict[tuple[int, FeatureKind], np.ndarray] = {}
    pct_list = sorted({e.percentile for e in recipe.entries if e.percentile is not None})
    pct_pos = {p: i for i, p in enumerate(pct_list)}

    def percentiles_for(level: int, kind: FeatureKind) -> np.ndarray:
        # One batched percentile pass per level over all kinds needing one.
        key = (level, kind)
        if key not in pct_cache:
            kinds = [
                e.kind for e in recipe.entries
                if e.level == level and e.percentile is not None
            ]
            kinds = list(dict.fromkeys(kinds))
            grids = [stack[level][kk] for kk in kinds]
            stacked = np.hstack([gg.values for gg in grids])
            if len(stacked) == 0:
                batch = np.zeros((len(pct_list), stacked.shape[1]))
            else:
                batch = linear_percentiles(stacked, pct_list)
            offset = 0
            for kk, gg in zip(kinds, grids):
                pct_cache[(level, kk)] = batch[:, offset : offset + gg.dim]
                offset += gg.dim
        return pct_cache[key]

    columns = recipe.columns()
    row = np.empty(len(columns))
    for c, desc in enumerate(columns):
        level = desc.resolution.bit_length() - 1
        comp = desc.component or 0
        if desc.is_raw:
            key = (level, desc.kind)
            if key not in dense_cache:
                dense_cache[key] = stack[level][desc.kind].to_dense()
            voxel = desc.voxel if desc.voxel is not None else (0, 0, 0)
            row[c] = dense_cache[key][voxel[0], voxel[1], voxel[2], comp]
        else:
            row[c] = percentiles_for(level, desc.kind)[pct_pos[desc.percentile], comp]
    return row


# ---------------------------------------------------------------------------
# Dataset manifests and matrices


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    label: str
    split: str


def read_manifest(path) -> list[ManifestRow]:
    """CSV with columns path,label,split; paths relative to the manifest."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "label", "split"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ManifestError(
                f"{path}: manifest needs columns path,label,split"
            )
        for rec in reader:
            split = rec["split"].strip()
            if split not in ("train", "test"):
                raise ManifestError(
                    f"{path}: split must be 'train' or 'test', got {split!r}"
                )
            rows.append(
                ManifestRow(
                    (path.parent / rec["path"].strip()).resolve(),
                    rec["label"].strip(),
                    split,
                )
            )
    if not rows:
        raise ManifestError(f"{path}: manifest is empty")
    train_labels = {r.label for r in rows if r.split == "train"}
    unknown = {r.label for r in rows if r.split == "test"} - train_labels
    if unknown:
        raise ManifestError(
            f"{path}: test labels never seen in train: {sorted(unknown)}"
        )
    return rows


@dataclass
class FeatureMatrix:
    """Objects x named feature columns, one row per (object, rotation)."""

    descriptors: list[FeatureDescriptor]
    values: np.ndarray  # (R, C) float64
    object_ids: list[str]
    labels: list[str]
    rotations: np.ndarray  # (R,) int
    splits: list[str]  # "train" / "test"
    label_names: tuple[str, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.int64)
        r, c = self.values.shape
        if not (
            len(self.object_ids) == len(self.labels) == len(self.splits)
            == len(self.rotations) == r
        ):
            raise ValueError("row metadata lengths disagree with the value matrix")
        if len(self.descriptors) != c:
            raise ValueError("descriptor count disagrees with the value matrix")

    @property
    def column_names(self) -> list[str]:
        return [d.name for d in self.descriptors]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def label_indices(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.label_names)}
        return np.array([index[l] for l in self.labels], dtype=np.int64)

    def split_rows(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split])

    def object_groups(self, split: str | None = None) -> dict[str, np.ndarray]:
        """Row indices per object id (for rotation-grouped prediction)."""
        groups: dict[str, list[int]] = {}
        for i, (obj, s) in enumerate(zip(self.object_ids, self.splits)):
            if split is None or s == split:
                groups.setdefault(obj, []).append(i)
        return {k: np.array(v) for k, v in groups.items()}


def _extract_one(args):
    path, recipe, margin = args
    mesh = load_mesh(path)
    rotations = sample_rotations(recipe.rotations, recipe.seed, recipe.include_reflections)
    return np.stack([extract_object(mesh, recipe, rot, margin) for rot in rotations])


def build_matrix(
    manifest,
    recipe: FeatureRecipe,
    margin: float = 0.0,
    threads: int = 1,
    progress=None,
) -> FeatureMatrix:
    """Extract the full matrix for a manifest (list or CSV path).

    Every object contributes one row per augmentation rotation, train and
    test alike. Objects that fail to load or extract are skipped with a
    recorded reason unless more than 10% fail, which aborts.
    """
    if not isinstance(manifest, (list, tuple)):
        manifest = read_manifest(manifest)
    if not manifest:
        raise ManifestError("manifest is empty")
    descriptors = recipe.columns()
    jobs = [(str(row.path), recipe, margin) for row in manifest]
    results: list[np.ndarray | None] = [None] * len(manifest)
    failures: list[tuple[str, str]] = []

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, res in enumerate(pool.map(_try_extract, jobs)):
                results[i] = res if isinstance(res, np.ndarray) else None
                if not isinstance(res, np.ndarray):
                    failures.append((jobs[i][0], res))
                if progress is not None:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            res = _try_extract(job)
            results[i] = res if isinstance(res, np.ndarray) else None
            if not isinstance(res, np.ndarray):
                failures.append((job[0], res))
            if progress is not None:
                progress(i + 1, len(jobs))

    if len(failures) > 0.10 * len(manifest):
        detail = "; ".join(f"{p}: {r}" for p, r in failures[:5])
        raise ExtractionError(
            f"{len(failures)}/{len(manifest)} objects failed ({detail} ...)"
        )

    blocks, object_ids, labels, rotations, splits = [], [], [], [], []
    for row, block in zip(manifest, results):
        if block is None:
            continue
        blocks.append(block)
        object_ids += [str(row.path)] * recipe.rotations
        labels += [row.label] * recipe.rotations
        rotations += list(range(recipe.rotations))
        splits += [row.split] * recipe.rotations
    if not blocks:
        raise ExtractionError("no objects could be extracted")
    label_names = tuple(sorted({r.label for r in manifest}))
    matrix = FeatureMatrix(
        descriptors,
        np.vstack(blocks),
        object_ids,
        labels,
        np.array(rotations),
        splits,
        label_names,
    )
    matrix.failures = failures
    return matrix


def _try_extract(job):
    try:
        return _extract_one(job)
    except (GeovoxError, OSError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# Persistence

_META_COLUMNS = ("object", "label", "rotation", "split")


def save_matrix(matrix: FeatureMatrix, path, format: str = "binary") -> None:
    """Write the matrix; binary round-trips bit-exactly, CSV to full digits."""
    path = Path(path)
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(MATRIX_MAGIC)
            r, c = matrix.values.shape
            fh.write(struct.pack("<IQQI", MATRIX_VERSION, r, c, len(matrix.label_names)))
            for name in matrix.label_names:
                _write_str(fh, name)
            for d in matrix.descriptors:
                _write_str(fh, d.name)
            label_idx = matrix.label_indices()
            for i in range(r):
                _write_str(fh, matrix.object_ids[i])
            fh.write(label_idx.astype("<i4").tobytes())
            fh.write(matrix.rotations.astype("<i4").tobytes())
            fh.write(
                np.array(
                    [0 if s == "train" else 1 for s in matrix.splits], dtype="<u1"
                ).tobytes()
            )
            fh.write(np.ascontiguousarray(matrix.values, dtype="<f8").tobytes())
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(matrix.column_names + list(_META_COLUMNS))
            for i in range(matrix.n_rows):
                writer.writerow(
                    [f"{v:.17g}" for v in matrix.values[i]]
                    + [
                        matrix.object_ids[i],
                        matrix.labels[i],
                        str(int(matrix.rotations[i])),
                        matrix.splits[i],
                    ]
                )
    else:
        raise ValueError(f"unknown matrix format {format!r}")


def _write_str(fh, s: str) -> None:
    raw = s.encode()
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FileFormatError(f"{self.path}: truncated matrix file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def read_str(self) -> str:
        (n,) = struct.unpack("<I", self.take(4))
        return self.take(n).decode()


def load_matrix(path) -> FeatureMatrix:
    """Read a matrix written by :func:`save_matrix` (either format)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == MATRIX_MAGIC:
        rd = _Reader(data, path)
        rd.take(4)
        version, r, c, n_labels = struct.unpack("<IQQI", rd.take(24))
        if version != MATRIX_VERSION:
            raise VersionMismatch(f"{path}: matrix version {version} not supported")
        label_names = tuple(rd.read_str() for _ in range(n_labels))
        descriptors = [FeatureDescriptor.parse(rd.read_str()) for _ in range(c)]
        object_ids = [rd.read_str() for _ in range(r)]
        label_idx = np.frombuffer(rd.take(4 * r), dtype="<i4")
        rotations = np.frombuffer(rd.take(4 * r), dtype="<i4").astype(np.int64)
        split_raw = np.frombuffer(rd.take(r), dtype="<u1")
        values = np.frombuffer(rd.take(8 * r * c), dtype="<f8").reshape(r, c).copy()
        if rd.pos != len(data):
            raise FileFormatError(f"{path}: trailing bytes in matrix file")
        labels = [label_names[i] for i in label_idx]
        splits = ["train" if s == 0 else "test" for s in split_raw]
        return FeatureMatrix(
            descriptors, values, object_ids, labels, rotations, splits, label_names
        )
    # CSV path
    text = data.decode()
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if len(header) < len(_META_COLUMNS) or tuple(header[-4:]) != _META_COLUMNS:
        raise FileFormatError(f"{path}: not a geovox matrix CSV")
    names = header[:-4]
    descriptors = [FeatureDescriptor.parse(n) for n in names]
    values, object_ids, labels, rotations, splits = [], [], [], [], []
    for rec in reader:
        if len(rec) != len(header):
            raise FileFormatError(f"{path}: ragged CSV record")
        values.append([float(x) for x in rec[: len(names)]])
        object_ids.append(rec[-4])
        labels.append(rec[-3])
        rotations.append(int(rec[-2]))
        splits.append(rec[-1])
    return FeatureMatrix(
        descriptors,
        np.array(values, dtype=np.float64).reshape(len(object_ids), len(names)),
        object_ids,
        labels,
        np.array(rotations),
        splits,
        tuple(sorted(set(labels))),
    )


# ---------------------------------------------------------------------------
# sklearn-style front door


class VoxelFeatureTransformer(BaseEstimator, TransformerMixin):
    """Mesh -> feature-vector transformer with the estimator interface.

    ``transform`` accepts a sequence of mesh paths or
    :class:`~geovox.mesh.TriangleMesh` objects and emits one row per input
    (no rotation augmentation; use :func:`build_matrix` for augmented
    training sets). Stateless: ``fit`` only validates the recipe.
    """

    def __init__(self, recipe: str = "default", margin: float = 0.0):
        self.recipe = recipe
        self.margin = margin

    def _resolved_recipe(self) -> FeatureRecipe:
        if isinstance(self.recipe, FeatureRecipe):
            return self.recipe
        return FeatureRecipe.parse(self.recipe)

    def fit(self, X=None, y=None):
        self.recipe_ = self._resolved_recipe()
        self.feature_names_out_ = [d.name for d in self.recipe_.columns()]
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "recipe_"):
            self.fit()
        rows = []
        for item in X:
            mesh = item if isinstance(item, TriangleMesh) else load_mesh(item)
            rows.append(extract_object(mesh, self.recipe_, None, self.margin))
        return np.vstack(rows) if rows else np.empty((0, len(self.feature_names_out_)))

    def get_feature_names_out(self, input_features=None):
        if not hasattr(self, "feature_names_out_"):
            self.fit()
        return np.array(self.feature_names_out_, dtype=object)
