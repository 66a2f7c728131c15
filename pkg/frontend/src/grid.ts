/** Parser for the geovox sparse-grid binary format (little-endian).
 *
 * Layout: magic "VXGR", u32 version, u32 level, u32 dim, 8-byte
 * NUL-padded kind name, u64 record count, then `count` records of
 * (i32 i, i32 j, i32 k, dim x f64 values).
 */

const GRID_MAGIC = "VXGR";
const GRID_VERSION = 1;
const HEADER_BYTES = 4 + 4 + 4 + 4 + 8 + 8;

export interface BoundGrid {
  level: number;
  resolution: number;
  kind: string;
  dim: number;
  count: number;
  /** Flattened (count x 3) voxel coordinates. */
  keys: Int32Array;
  /** Flattened (count x dim) feature values. */
  values: Float64Array;
}

export function parseGrid(buffer: Buffer): BoundGrid {
  if (buffer.length < HEADER_BYTES) {
    throw new Error("truncated grid header");
  }
  if (buffer.toString("latin1", 0, 4) !== GRID_MAGIC) {
    throw new Error("not a geovox grid file");
  }
  const version = buffer.readUInt32LE(4);
  if (version !== GRID_VERSION) {
    throw new Error(`unsupported grid version ${version}`);
  }
  const level = buffer.readUInt32LE(8);
  const dim = buffer.readUInt32LE(12);
  const kind = buffer.toString("utf8", 16, 24).replace(/\0+$/, "");
  const count = Number(buffer.readBigUInt64LE(24));
  const recordBytes = 12 + 8 * dim;
  if (buffer.length !== HEADER_BYTES + count * recordBytes) {
    throw new Error("truncated grid records");
  }
  const keys = new Int32Array(count * 3);
  const values = new Float64Array(count * dim);
  for (let m = 0; m < count; m++) {
    const base = HEADER_BYTES + m * recordBytes;
    keys[3 * m] = buffer.readInt32LE(base);
    keys[3 * m + 1] = buffer.readInt32LE(base + 4);
    keys[3 * m + 2] = buffer.readInt32LE(base + 8);
    for (let d = 0; d < dim; d++) {
      values[dim * m + d] = buffer.readDoubleLE(base + 12 + 8 * d);
    }
  }
  return { level, resolution: 1 << level, kind, dim, count, keys, values };
}
