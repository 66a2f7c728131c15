"""Multiclass gradient boosting with depth-limited trees and softmax loss.

Trees are grown by exact greedy search: per node every (column, threshold
between adjacent distinct values) candidate is scored with the second-order
gain ``(GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)) / 2 - gamma``
and leaves get ``-G/(H+lambda) * learning_rate``. One tree per class is
added per round. Ties break deterministically: lowest column index, then
lowest threshold; rows with NaN follow a per-node direction learned from
gain.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ColumnMismatch, DegenerateData, FileFormatError, VersionMismatch

MODEL_VERSION = 1

_SPLIT_CHUNK = 512  # columns per vectorized split-search block


@dataclass(frozen=True)
class BoostParams:
    max_depth: int = 2
    rounds: int = 100
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 0
    early_stopping_rounds: int | None = None
    validation_fraction: float = 0.0


class DecisionTree:
    """Array-based binary tree; ``feature[i] < 0`` marks node i as a leaf."""

    def __init__(self, feature, threshold, missing_left, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.missing_left = np.asarray(missing_left, dtype=bool)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def split_columns(self) -> list[int]:
        return [int(f) for f in self.feature if f >= 0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int64)
        while True:
            feats = self.feature[idx]
            active = np.nonzero(feats >= 0)[0]
            if len(active) == 0:
                break
            node = idx[active]
            xv = X[active, feats[active]]
            nan = np.isnan(xv)
            go_left = np.where(nan, self.missing_left[node], xv < self.threshold[node])
            idx[active] = np.where(go_left, self.left[node], self.right[node])
        return self.value[idx]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "missing_left": self.missing_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            d["feature"], d["threshold"], d["missing_left"],
            d["left"], d["right"], d["value"],
        )


@dataclass
class _Split:
    gain: float
    column: int
    threshold: float
    missing_left: bool


def _find_split(X, g, h, rows, order, params) -> _Split | None:
    """Exact greedy split over all columns for one node's row set."""
    r = len(rows)
    if r < 2:
        return None
    in_node = np.zeros(X.shape[0], dtype=bool)
    in_node[rows] = True
    g_tot = float(g[rows].sum())
    h_tot = float(h[rows].sum())
    lam = params.reg_lambda
    parent = g_tot * g_tot / (h_tot + lam)
    mcw = params.min_child_weight

    best_gain = 0.0
    best: _Split | None = None
    best_pos = -1
    n_cols = X.shape[1]
    for c0 in range(0, n_cols, _SPLIT_CHUNK):
        c1 = min(c0 + _SPLIT_CHUNK, n_cols)
        cc = c1 - c0
        ordc = order[:, c0:c1]
        kept = ordc.T[in_node[ordc].T].reshape(cc, r).T  # (r, cc) row ids
        xs = np.take_along_axis(X[:, c0:c1], kept, axis=0)
        gs = g[kept]
        hs = h[kept]
        gl = np.cumsum(gs, axis=0)
        hl = np.cumsum(hs, axis=0)
        n_valid = r - np.isnan(xs).sum(axis=0)  # NaNs sort last
        cols = np.arange(cc)
        last = np.maximum(n_valid - 1, 0)
        g_val = np.where(n_valid > 0, gl[last, cols], 0.0)
        h_val = np.where(n_valid > 0, hl[last, cols], 0.0)
        g_nan = g_tot - g_val
        h_nan = h_tot - h_val

        gls = gl[: r - 1]
        hls = hl[: r - 1]
        pos = np.arange(r - 1)[:, None]
        valid = (pos + 1 < n_valid[None, :]) & (xs[1:] > xs[:-1])
        grs = g_val - gls
        hrs = h_val - hls
        if (n_valid == r).all():  # dense chunk: no rows to route
            gain = gls**2 / (hls + lam) + grs**2 / (hrs + lam)
            ok = valid & (hls >= mcw) & (hrs >= mcw)
            gain = np.where(ok, 0.5 * (gain - parent) - params.gamma, -np.inf)
            left_route = np.ones_like(gain, dtype=bool)
        else:
            # Route missing rows left or right, keeping the better direction.
            gain_l = (gls + g_nan) ** 2 / (hls + h_nan + lam) + grs**2 / (hrs + lam)
            ok_l = valid & (hls + h_nan >= mcw) & (hrs >= mcw)
            gain_r = gls**2 / (hls + lam) + (grs + g_nan) ** 2 / (hrs + h_nan + lam)
            ok_r = valid & (hls >= mcw) & (hrs + h_nan >= mcw)
            gain_l = np.where(ok_l, 0.5 * (gain_l - parent) - params.gamma, -np.inf)
            gain_r = np.where(ok_r, 0.5 * (gain_r - parent) - params.gamma, -np.inf)
            left_route = gain_l >= gain_r
            gain = np.where(left_route, gain_l, gain_r)
        if gain.size == 0:
            continue
        col_pos = np.argmax(gain, axis=0)  # first max = lowest threshold
        col_gain = gain[col_pos, cols]
        c_best = int(np.argmax(col_gain))  # first max = lowest column
        if col_gain[c_best] > best_gain:
            best_gain = float(col_gain[c_best])
            p = int(col_pos[c_best])
            best = _Split(
                best_gain,
                c0 + c_best,
                float("nan"),  # threshold resolved below
                bool(left_route[p, c_best]),
            )
            best_pos = p
    if best is None:
        return None
    vals = X[rows, best.column]
    svals = np.sort(vals[~np.isnan(vals)])
    a, b = float(svals[best_pos]), float(svals[best_pos + 1])
    thr = 0.5 * (a + b)
    if not a < thr:
        thr = b
    best.threshold = thr
    return best


def _grow_tree(X, g, h, params: BoostParams, order) -> DecisionTree:
    feature, threshold, missing_left, left, right, value = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        missing_left.append(True)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    lam = params.reg_lambda
    lr = params.learning_rate
    root = new_node()
    queue = [(root, np.arange(X.shape[0]), 0)]
    while queue:
        nid, rows, depth = queue.pop(0)
        split = None
        if depth < params.max_depth:
            split = _find_split(X, g, h, rows, order, params)
        if split is None:
            value[nid] = -float(g[rows].sum()) / (float(h[rows].sum()) + lam) * lr
            continue
        xv = X[rows, split.column]
        nan = np.isnan(xv)
        go_left = np.where(nan, split.missing_left, xv < split.threshold)
        feature[nid] = split.column
        threshold[nid] = split.threshold
        missing_left[nid] = split.missing_left
        lid, rid = new_node(), new_node()
        left[nid], right[nid] = lid, rid
        queue.append((lid, rows[go_left], depth + 1))
        queue.append((rid, rows[~go_left], depth + 1))
    return DecisionTree(feature, threshold, missing_left, left, right, value)


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class TreeEnsemble:
    """R rounds x K classes of depth-limited trees plus additive scoring."""

    def __init__(
        self,
        trees: list[list[DecisionTree]],
        classes: tuple[str, ...],
        params: BoostParams,
        column_names: tuple[str, ...] | None = None,
        base_score: float = 0.0,
        train_loss: list[float] | None = None,
        n_features: int | None = None,
    ):
        self.trees = trees
        self.classes = tuple(classes)
        self.params = params
        self.column_names = tuple(column_names) if column_names else None
        self.base_score = base_score
        self.train_loss = list(train_loss) if train_loss else []
        self.n_features = n_features

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def _check_columns(self, X: np.ndarray) -> None:
        expected = self.n_columns
        if expected is not None:
            if X.shape[1] != expected:
                raise ColumnMismatch(
                    f"model expects {expected} columns, got {X.shape[1]}"
                )
            return
        cols = [c for row in self.trees for t in row for c in t.split_columns()]
        if cols and X.shape[1] <= max(cols):
            raise ColumnMismatch(
                f"model splits on column {max(cols)}, got only {X.shape[1]} columns"
            )

    @property
    def n_columns(self) -> int | None:
        if self.column_names is not None:
            return len(self.column_names)
        return self.n_features

    def raw_scores(self, X: np.ndarray, up_to_round: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        self._check_columns(X)
        scores = np.full((len(X), self.n_classes), self.base_score)
        rounds = self.trees if up_to_round is None else self.trees[:up_to_round]
        for row in rounds:
            for k, tree in enumerate(row):
                scores[:, k] += tree.predict(X)
        return scores

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self.raw_scores(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predicted class indices; argmax ties go to the lowest index."""
        return np.argmax(self.predict_proba(X), axis=1)

    def staged_scores(self, X: np.ndarray):
        """Yield (round, cumulative raw scores) after each boosting round."""
        X = np.asarray(X, dtype=np.float64)
        self._check_columns(X)
        scores = np.full((len(X), self.n_classes), self.base_score)
        for r, row in enumerate(self.trees):
            for k, tree in enumerate(row):
                scores[:, k] += tree.predict(X)
            yield r, scores

    def describe(self) -> str:
        """Readable dump of every tree: column, threshold, leaf values."""
        lines = []

        def colname(c: int) -> str:
            if self.column_names is not None:
                return self.column_names[c]
            return f"col{c}"

        for r, row in enumerate(self.trees):
            for k, tree in enumerate(row):
                lines.append(f"round {r} class {self.classes[k]}")

                def walk(node: int, indent: str):
                    if tree.feature[node] < 0:
                        lines.append(f"{indent}leaf {tree.value[node]:.6g}")
                        return
                    miss = "left" if tree.missing_left[node] else "right"
                    lines.append(
                        f"{indent}{colname(int(tree.feature[node]))} "
                        f"< {tree.threshold[node]:.9g} (missing {miss})"
                    )
                    walk(int(tree.left[node]), indent + "  ")
                    walk(int(tree.right[node]), indent + "  ")

                walk(0, "  ")
        return "\n".join(lines)

    def save(self, path) -> None:
        doc = {
            "format": "geovox-ensemble",
            "version": MODEL_VERSION,
            "classes": list(self.classes),
            "column_names": list(self.column_names) if self.column_names else None,
            "params": asdict(self.params),
            "base_score": self.base_score,
            "train_loss": self.train_loss,
            "n_features": self.n_features,
            "trees": [[t.to_dict() for t in row] for row in self.trees],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: not a geovox model file") from exc
        if doc.get("format") != "geovox-ensemble":
            raise FileFormatError(f"{path}: not a geovox model file")
        if doc.get("version") != MODEL_VERSION:
            raise VersionMismatch(f"{path}: model version {doc.get('version')}")
        return cls(
            [[DecisionTree.from_dict(t) for t in row] for row in doc["trees"]],
            tuple(doc["classes"]),
            BoostParams(**doc["params"]),
            tuple(doc["column_names"]) if doc["column_names"] else None,
            doc["base_score"],
            doc.get("train_loss"),
            doc.get("n_features"),
        )


def fit_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    params: BoostParams,
    classes: tuple[str, ...] | None = None,
    column_names: tuple[str, ...] | None = None,
) -> TreeEnsemble:
    """Second-order boosting of depth-limited trees on encoded labels."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise DegenerateData("training matrix is empty")
    if n_classes < 2:
        raise DegenerateData("training needs at least two classes")
    if classes is None:
        classes = tuple(str(k) for k in range(n_classes))

    train_idx = np.arange(len(X))
    val_idx = np.array([], dtype=np.int64)
    if params.validation_fraction > 0.0:
        rng = np.random.default_rng(params.seed)
        perm = rng.permutation(len(X))
        n_val = max(1, int(round(params.validation_fraction * len(X))))
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    Xt, yt = X[train_idx], y[train_idx]
    order = np.argsort(Xt, kind="stable", axis=0)
    onehot = np.zeros((len(Xt), n_classes))
    onehot[np.arange(len(Xt)), yt] = 1.0

    scores = np.zeros((len(Xt), n_classes))
    val_scores = np.zeros((len(val_idx), n_classes))
    trees: list[list[DecisionTree]] = []
    train_loss: list[float] = []
    best_val_err = np.inf
    best_round = 0
    for rnd in range(params.rounds):
        proba = _softmax(scores)
        grad = proba - onehot
        hess = np.maximum(2.0 * proba * (1.0 - proba), 1e-16)
        row = []
        for k in range(n_classes):
            tree = _grow_tree(Xt, grad[:, k], hess[:, k], params, order)
            scores[:, k] += tree.predict(Xt)
            row.append(tree)
        trees.append(row)
        proba = _softmax(scores)
        train_loss.append(
            float(-np.log(np.maximum(proba[np.arange(len(Xt)), yt], 1e-300)).mean())
        )
        if len(val_idx) and params.early_stopping_rounds:
            for k in range(n_classes):
                val_scores[:, k] += row[k].predict(X[val_idx])
            val_err = float(
                (np.argmax(val_scores, axis=1) != y[val_idx]).mean()
            )
            if val_err < best_val_err:
                best_val_err = val_err
                best_round = rnd
            elif rnd - best_round >= params.early_stopping_rounds:
                trees = trees[: best_round + 1]
                train_loss = train_loss[: best_round + 1]
                break
    return TreeEnsemble(
        trees, classes, params, column_names, 0.0, train_loss, X.shape[1]
    )


# ---------------------------------------------------------------------------
# FeatureMatrix-level API


def train(matrix, params: BoostParams = BoostParams()) -> TreeEnsemble:
    """Fit on the matrix's train rows with its declared label set."""
    rows = matrix.split_rows("train")
    if len(rows) == 0:
        raise DegenerateData("matrix has no train rows")
    y = matrix.label_indices()[rows]
    present = np.unique(y)
    if len(present) < 2:
        raise DegenerateData("training rows cover fewer than two classes")
    return fit_ensemble(
        matrix.values[rows],
        y,
        len(matrix.label_names),
        params,
        classes=matrix.label_names,
        column_names=tuple(matrix.column_names),
    )


def predict(ensemble: TreeEnsemble, rows: np.ndarray) -> np.ndarray:
    """Class probabilities for one row or a batch."""
    return ensemble.predict_proba(rows)


def predict_symmetrized(ensemble: TreeEnsemble, rows: np.ndarray) -> np.ndarray:
    """Mean of per-rotation probability vectors for one object's rows."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if len(rows) == 0:
        raise ValueError("need at least one rotation row")
    return ensemble.predict_proba(rows).mean(axis=0)


@dataclass
class EvalReport:
    error_rate: float
    confusion: np.ndarray  # (K, K) true x predicted counts
    n_evaluated: int
    symmetrized: bool
    history: list[dict] = field(default_factory=list)


def evaluate(
    ensemble: TreeEnsemble,
    matrix,
    symmetrize: bool = False,
    history: bool = False,
    split: str = "test",
) -> EvalReport:
    """Error rate and confusion counts over the matrix's test rows.

    Without symmetrization each (object, rotation) row counts separately;
    with it, per-object probabilities are averaged over rotations first.
    """
    k = ensemble.n_classes
    label_idx = matrix.label_indices()
    rows = matrix.split_rows(split)
    if len(rows) == 0:
        raise ValueError(f"matrix has no {split!r} rows")
    X = matrix.values[rows]
    y = label_idx[rows]
    groups = None
    if symmetrize:
        groups = matrix.object_groups(split)

    def errors_from_scores(scores: np.ndarray):
        proba = _softmax(scores)
        if not symmetrize:
            pred = np.argmax(proba, axis=1)
            return pred, y
        row_pos = {int(r): i for i, r in enumerate(rows)}
        preds, truths = [], []
        for obj, obj_rows in sorted(groups.items()):
            idx = [row_pos[int(r)] for r in obj_rows]
            preds.append(int(np.argmax(proba[idx].mean(axis=0))))
            truths.append(int(label_idx[obj_rows[0]]))
        return np.array(preds), np.array(truths)

    hist = []
    if history:
        for rnd, scores in ensemble.staged_scores(X):
            pred, truth = errors_from_scores(scores)
            hist.append({"round": rnd, "error": float((pred != truth).mean())})
        final_scores = scores
    else:
        final_scores = ensemble.raw_scores(X)
    pred, truth = errors_from_scores(final_scores)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    return EvalReport(
        float((pred != truth).mean()), confusion, len(truth), symmetrize, hist
    )


@dataclass
class ImportanceReport:
    """Split-occurrence counts per feature column across all trees."""

    counts: dict[int, int]
    names: list[str]

    def top(self, k: int) -> list[tuple[str, int]]:
        ranked = sorted(self.counts.items(), key=lambda it: (-it[1], it[0]))
        return [(self.names[c], n) for c, n in ranked[:k]]


def importance(ensemble: TreeEnsemble, top_k: int | None = None) -> ImportanceReport:
    counts: dict[int, int] = {}
    for row in ensemble.trees:
        for tree in row:
            for c in tree.split_columns():
                counts[c] = counts.get(c, 0) + 1
    n_cols = ensemble.n_columns or (max(counts) + 1 if counts else 0)
    names = (
        list(ensemble.column_names)
        if ensemble.column_names
        else [f"col{i}" for i in range(n_cols)]
    )
    report = ImportanceReport(counts, names)
    if top_k is not None:
        report.counts = dict(
            sorted(counts.items(), key=lambda it: (-it[1], it[0]))[:top_k]
        )
    return report


class GradientBoostedTrees(BaseEstimator, ClassifierMixin):
    """sklearn-style front end over :func:`fit_ensemble`."""

    def __init__(
        self,
        max_depth: int = 2,
        rounds: int = 100,
        learning_rate: float = 0.3,
        reg_lambda: float = 1.0,
        gamma: float = 0.0,
        min_child_weight: float = 1.0,
        seed: int = 0,
        early_stopping_rounds: int | None = None,
        validation_fraction: float = 0.0,
    ):
        self.max_depth = max_depth
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.seed = seed
        self.early_stopping_rounds = early_stopping_rounds
        self.validation_fraction = validation_fraction

    def _params(self) -> BoostParams:
        return BoostParams(
            self.max_depth,
            self.rounds,
            self.learning_rate,
            self.reg_lambda,
            self.gamma,
            self.min_child_weight,
            self.seed,
            self.early_stopping_rounds,
            self.validation_fraction,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=False)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise DegenerateData("need at least two classes")
        self.ensemble_ = fit_ensemble(
            X,
            y_idx,
            len(self.classes_),
            self._params(),
            classes=tuple(str(c) for c in self.classes_),
        )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "ensemble_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=False)
        return self.ensemble_.predict_proba(X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
