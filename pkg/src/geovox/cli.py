"""Command-line interface: voxelize / features / train / eval / importance.

Every command writes its resolved configuration next to its primary output
as ``<output>.run.json`` so runs can be reproduced exactly. Exit codes:
0 success, 2 usage, 3 data error (bad files, inconsistent meshes, ...),
4 internal error. Partially written outputs are removed on failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .classify import (
    BoostParams,
    TreeEnsemble,
    evaluate,
    importance,
    train,
)
from .errors import GeovoxError
from .features import FeatureKind, compute_grid
from .mesh import load_mesh, normalize_to_unit_cube
from .pipeline import FeatureRecipe, build_matrix, load_matrix, save_matrix
from .voxelize import octree_clip, export_cells_obj, save_grid

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


@dataclass(frozen=True)
class RunConfig:
    """Canonical, round-trippable record of one CLI invocation."""

    command: str
    options: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"tool": "geovox", "version": __version__, "command": self.command,
             "options": self.options},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        doc = json.loads(text)
        return cls(doc["command"], doc["options"])


def _echo_config(config: RunConfig, primary_output: Path, outputs: list[Path]) -> None:
    sidecar = Path(str(primary_output) + ".run.json")
    sidecar.write_text(config.to_json() + "\n")
    outputs.append(sidecar)


def _parse_kinds(text: str) -> list[FeatureKind]:
    return [FeatureKind.from_name(t) for t in text.split(",") if t.strip()]


def _cmd_voxelize(args, outputs: list[Path]) -> None:
    kinds = _parse_kinds(args.kinds)
    mesh = load_mesh(args.mesh)
    mesh, _ = normalize_to_unit_cube(mesh, args.margin)
    grids = compute_grid(mesh, args.level, kinds)
    out = Path(args.out)
    fmt = args.format or ("csv" if out.suffix.lower() == ".csv" else "binary")
    for kind in kinds:
        if len(kinds) == 1:
            path = out
        else:
            path = out.with_name(f"{out.stem}.{kind.label}{out.suffix}")
        save_grid(grids[kind], path, fmt)
        outputs.append(path)
        print(f"wrote {path} ({len(grids[kind])} records)")
    if args.dump_cells:
        cells = octree_clip(mesh, args.level)
        written = export_cells_obj(cells, args.dump_cells)
        outputs.extend(written)
        print(f"dumped {len(written)} cell OBJ files to {args.dump_cells}")
    config = RunConfig(
        "voxelize",
        {
            "mesh": str(args.mesh),
            "level": args.level,
            "kinds": [k.label for k in kinds],
            "margin": args.margin,
            "format": fmt,
            "out": str(out),
        },
    )
    _echo_config(config, out, outputs)


def _cmd_features(args, outputs: list[Path]) -> None:
    recipe = FeatureRecipe.parse(
        args.recipe,
        rotations=args.rotations,
        seed=args.seed,
        include_reflections=args.include_reflections,
    )
    threads = args.threads or os.cpu_count() or 1
    matrix = build_matrix(
        args.manifest,
        recipe,
        margin=args.margin,
        threads=threads,
        progress=_progress if args.progress else None,
    )
    out = Path(args.out)
    fmt = args.format or ("csv" if out.suffix.lower() == ".csv" else "binary")
    save_matrix(matrix, out, fmt)
    outputs.append(out)
    for path, reason in getattr(matrix, "failures", []):
        print(f"skipped {path}: {reason}", file=sys.stderr)
    print(f"wrote {out}: {matrix.n_rows} rows x {len(matrix.descriptors)} columns")
    config = RunConfig(
        "features",
        {
            "manifest": str(args.manifest),
            "recipe": recipe.render(),
            "rotations": recipe.rotations,
            "seed": recipe.seed,
            "include_reflections": recipe.include_reflections,
            "margin": args.margin,
            "format": fmt,
            "out": str(out),
        },
    )
    _echo_config(config, out, outputs)


def _progress(done: int, total: int) -> None:
    print(f"\r{done}/{total} objects", end="" if done < total else "\n", file=sys.stderr)


def _cmd_train(args, outputs: list[Path]) -> None:
    matrix = load_matrix(args.matrix)
    params = BoostParams(
        max_depth=args.depth,
        rounds=args.rounds,
        learning_rate=args.learning_rate,
        reg_lambda=args.reg_lambda,
        gamma=args.gamma,
        min_child_weight=args.min_child_weight,
        seed=args.seed,
        early_stopping_rounds=args.early_stopping_rounds,
        validation_fraction=args.validation_fraction,
    )
    ensemble = train(matrix, params)
    out = Path(args.out)
    ensemble.save(out)
    outputs.append(out)
    if ensemble.train_loss:
        print(f"final train loss: {ensemble.train_loss[-1]:.6f}")
    print(f"wrote {out}: {ensemble.n_rounds} rounds x {ensemble.n_classes} classes")
    if args.describe:
        desc = Path(args.describe)
        desc.write_text(ensemble.describe() + "\n")
        outputs.append(desc)
    config = RunConfig(
        "train", {"matrix": str(args.matrix), "out": str(out), **asdict(params)}
    )
    _echo_config(config, out, outputs)


def _cmd_eval(args, outputs: list[Path]) -> None:
    ensemble = TreeEnsemble.load(args.model)
    matrix = load_matrix(args.matrix)
    report = evaluate(
        ensemble, matrix, symmetrize=args.symmetrize, history=bool(args.history_csv)
    )
    out = Path(args.out)
    config = RunConfig(
        "eval",
        {
            "model": str(args.model),
            "matrix": str(args.matrix),
            "symmetrize": args.symmetrize,
            "out": str(out),
        },
    )
    doc = {
        "error_rate": report.error_rate,
        "n_evaluated": report.n_evaluated,
        "symmetrized": report.symmetrized,
        "classes": list(ensemble.classes),
        "confusion": report.confusion.tolist(),
        "config": json.loads(config.to_json()),
    }
    out.write_text(json.dumps(doc, indent=2) + "\n")
    outputs.append(out)
    print(f"error rate: {report.error_rate:.4f} over {report.n_evaluated} "
          f"{'objects' if report.symmetrized else 'rows'}")
    if args.history_csv:
        hist = Path(args.history_csv)
        with open(hist, "w") as fh:
            fh.write("round,error\n")
            for h in report.history:
                fh.write(f"{h['round']},{h['error']:.6f}\n")
        outputs.append(hist)
    _echo_config(config, out, outputs)


def _cmd_importance(args, outputs: list[Path]) -> None:
    ensemble = TreeEnsemble.load(args.model)
    report = importance(ensemble)
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write("column,count\n")
        for name, count in report.top(args.top):
            fh.write(f"{name},{count}\n")
    outputs.append(out)
    print(f"wrote top-{args.top} importance to {out}")
    config = RunConfig(
        "importance",
        {"model": str(args.model), "top": args.top, "out": str(out)},
    )
    _echo_config(config, out, outputs)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geovox",
        description="Sparse integral-geometric voxel features for CAD surfaces",
    )
    parser.add_argument("--version", action="version", version=f"geovox {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="clip a mesh into a sparse feature grid")
    p.add_argument("mesh", help="mesh file (OBJ / STL / OFF)")
    p.add_argument("--level", type=int, required=True, help="octree level n, N=2^n")
    p.add_argument("--kinds", default="SA", help="comma list, e.g. SA,QF,EV")
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--format", choices=["binary", "csv"])
    p.add_argument("--dump-cells", help="directory for per-voxel OBJ debug dumps")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_voxelize)

    p = sub.add_parser("features", help="build a feature matrix from a manifest")
    p.add_argument("manifest", help="CSV with columns path,label,split")
    p.add_argument("--recipe", default="default",
                   help="'default' or entries like EV@1:raw,VAD@32:hist25")
    p.add_argument("--rotations", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-reflections", action="store_true")
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--threads", type=int, default=0,
                   help="worker processes (default: all cores)")
    p.add_argument("--format", choices=["binary", "csv"])
    p.add_argument("--progress", action="store_true")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="fit boosted trees on a feature matrix")
    p.add_argument("matrix")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.3)
    p.add_argument("--reg-lambda", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--min-child-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--early-stopping-rounds", type=int, default=None)
    p.add_argument("--validation-fraction", type=float, default=0.0)
    p.add_argument("--describe", help="also write a readable tree dump here")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a matrix's test rows")
    p.add_argument("model")
    p.add_argument("matrix")
    p.add_argument("--symmetrize", action="store_true",
                   help="average probabilities over each object's rotations")
    p.add_argument("--history-csv", help="write per-round error history CSV")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("importance", help="split-occurrence counts per column")
    p.add_argument("model")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_importance)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    outputs: list[Path] = []
    try:
        args.func(args, outputs)
        return EXIT_OK
    except GeovoxError as exc:
        _cleanup(outputs)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        _cleanup(outputs)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:  # bad recipe strings, kinds, percentiles, ...
        _cleanup(outputs)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surfaced with a distinct code
        _cleanup(outputs)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _cleanup(outputs: list[Path]) -> None:
    for path in outputs:
        try:
            path.unlink()
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
