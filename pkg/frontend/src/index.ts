/** Thin async wrapper over the geovox CLI.
 *
 * Both entry points shell out to the Python core and parse its file
 * formats back into typed arrays, so results are byte-identical to what
 * the CLI writes. Core failures surface as exceptions carrying the
 * core's own error message.
 */

import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import * as path from "node:path";

import { BoundGrid, parseGrid } from "./grid.js";
import { FeatureRows, parseMatrixCsv } from "./matrix.js";
import { GeovoxError, RunnerOptions, runGeovox } from "./runner.js";

export { BoundGrid, FeatureRows, GeovoxError, RunnerOptions };
export { parseGrid } from "./grid.js";
export { parseMatrixCsv } from "./matrix.js";

export const VERSION = "0.1.0";

export interface ComputeGridOptions extends RunnerOptions {
  /** Normalization margin, as in the CLI. */
  margin?: number;
}

/** Sparse per-voxel feature grids for one mesh at resolution 2**level. */
export async function computeGrid(
  meshPath: string,
  level: number,
  kinds: string[],
  options?: ComputeGridOptions,
): Promise<Map<string, BoundGrid>> {
  if (kinds.length === 0) {
    return new Map();
  }
  const work = await mkdtemp(path.join(tmpdir(), "geovox-grid-"));
  try {
    const out = path.join(work, "grid.bin");
    const args = [
      "voxelize",
      meshPath,
      "--level",
      String(level),
      "--kinds",
      kinds.join(","),
      "--format",
      "binary",
      "-o",
      out,
    ];
    if (options?.margin !== undefined) {
      args.push("--margin", String(options.margin));
    }
    await runGeovox(args, options);
    const result = new Map<string, BoundGrid>();
    for (const kind of kinds) {
      const file =
        kinds.length === 1 ? out : path.join(work, `grid.${kind}.bin`);
      result.set(kind, parseGrid(await readFile(file)));
    }
    return result;
  } finally {
    await rm(work, { recursive: true, force: true });
  }
}

export interface ExtractOptions extends RunnerOptions {
  margin?: number;
  includeReflections?: boolean;
}

/** Named feature vectors for one mesh: one row per augmentation rotation. */
export async function extract(
  meshPath: string,
  recipe: string,
  rotations = 1,
  seed = 0,
  options?: ExtractOptions,
): Promise<FeatureRows> {
  if (recipe.trim() === "") {
    // zero-column vectors, one per rotation; nothing for the core to do
    return {
      columns: [],
      rows: Array.from({ length: rotations }, () => new Float64Array(0)),
      objects: Array.from({ length: rotations }, () => path.resolve(meshPath)),
      labels: Array.from({ length: rotations }, () => "object"),
      rotations: Array.from({ length: rotations }, (_, i) => i),
      splits: Array.from({ length: rotations }, () => "train"),
    };
  }
  const work = await mkdtemp(path.join(tmpdir(), "geovox-extract-"));
  try {
    const manifest = path.join(work, "manifest.csv");
    const meshAbs = path.resolve(meshPath);
    await writeFile(
      manifest,
      `path,label,split\n${meshAbs},object,train\n`,
      "utf8",
    );
    const out = path.join(work, "features.csv");
    const args = [
      "features",
      manifest,
      "--recipe",
      recipe,
      "--rotations",
      String(rotations),
      "--seed",
      String(seed),
      "--threads",
      "1",
      "--format",
      "csv",
      "-o",
      out,
    ];
    if (options?.margin !== undefined) {
      args.push("--margin", String(options.margin));
    }
    if (options?.includeReflections) {
      args.push("--include-reflections");
    }
    await runGeovox(args, options);
    return parseMatrixCsv(await readFile(out, "utf8"));
  } finally {
    await rm(work, { recursive: true, force: true });
  }
}
