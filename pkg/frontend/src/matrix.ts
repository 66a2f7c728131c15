/** Parser for the geovox feature-matrix CSV format.
 *
 * The header carries canonical feature column names first and the four
 * metadata columns (object, label, rotation, split) last; values are
 * printed with 17 significant digits, so parsing back to f64 is exact.
 */

export interface FeatureRows {
  columns: string[];
  /** One Float64Array of feature values per (object, rotation) row. */
  rows: Float64Array[];
  objects: string[];
  labels: string[];
  rotations: number[];
  splits: string[];
}

const META_COLUMNS = ["object", "label", "rotation", "split"];

/** Minimal CSV field splitter with RFC-4180 quoting.
 *
 * Raw voxel column names carry commas (e.g. `[2][QF][0][0,0,1]`), so the
 * core quotes them; values themselves are never quoted.
 */
function splitCsvLine(line: string): string[] {
  const out: string[] = [];
  let cur = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"') {
        if (line[i + 1] === '"') {
          cur += '"';
          i++;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ",") {
      out.push(cur);
      cur = "";
    } else {
      cur += ch;
    }
  }
  out.push(cur);
  return out;
}

export function parseMatrixCsv(text: string): FeatureRows {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0 && !l.startsWith("#"));
  if (lines.length === 0) {
    throw new Error("empty matrix CSV");
  }
  const header = splitCsvLine(lines[0]);
  const metaStart = header.length - META_COLUMNS.length;
  if (
    metaStart < 0 ||
    !META_COLUMNS.every((name, i) => header[metaStart + i] === name)
  ) {
    throw new Error("not a geovox matrix CSV (metadata columns missing)");
  }
  const columns = header.slice(0, metaStart);
  const out: FeatureRows = {
    columns,
    rows: [],
    objects: [],
    labels: [],
    rotations: [],
    splits: [],
  };
  for (const line of lines.slice(1)) {
    const parts = splitCsvLine(line);
    if (parts.length !== header.length) {
      throw new Error("ragged matrix CSV record");
    }
    const row = new Float64Array(columns.length);
    for (let c = 0; c < columns.length; c++) {
      row[c] = Number(parts[c]);
    }
    out.rows.push(row);
    out.objects.push(parts[metaStart]);
    out.labels.push(parts[metaStart + 1]);
    out.rotations.push(Number(parts[metaStart + 2]));
    out.splits.push(parts[metaStart + 3]);
  }
  return out;
}
