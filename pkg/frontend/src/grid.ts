/** Label-grid decoding and voxel addressing.
 *
 * Grids travel as base64 of a C-order uint8 array with dims [X, Y, Z]
 * (Y is up). The decoder validates the byte count against the declared
 * header so a truncated or mislabeled payload fails loudly instead of
 * rendering garbage.
 */

import type { Region, SemanticPayload } from "./types.js";

export interface LabelGrid {
  dims: [number, number, number];
  voxelSizeM: number;
  data: Uint8Array;
}

export function bytesFromBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const text = atob(b64);
    const out = new Uint8Array(text.length);
    for (let i = 0; i < text.length; i++) out[i] = text.charCodeAt(i);
    return out;
  }
  // Node (tests, round-trip script)
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export function base64FromBytes(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let text = "";
    for (let i = 0; i < bytes.length; i++) text += String.fromCharCode(bytes[i]!);
    return btoa(text);
  }
  return Buffer.from(bytes).toString("base64");
}

export function decodeLabelGrid(payload: SemanticPayload): LabelGrid {
  const { dims, dtype, order } = payload;
  if (dtype !== "uint8" || order !== "C") {
    throw new Error(`unsupported grid encoding: dtype=${dtype} order=${order}`);
  }
  const expected = dims[0] * dims[1] * dims[2];
  const data = bytesFromBase64(payload.labels_b64);
  if (data.length !== expected) {
    throw new Error(
      `grid payload holds ${data.length} voxels but dims ${dims.join("x")} ` +
      `declare ${expected}`);
  }
  return { dims: [...dims], voxelSizeM: payload.voxel_size_m, data };
}

export function voxelIndex(grid: LabelGrid, x: number, y: number, z: number): number {
  const [, ny, nz] = grid.dims;
  return (x * ny + y) * nz + z;
}

export function voxelAt(grid: LabelGrid, x: number, y: number, z: number): number {
  return grid.data[voxelIndex(grid, x, y, z)]!;
}

export function cloneGrid(grid: LabelGrid): LabelGrid {
  return { dims: [...grid.dims], voxelSizeM: grid.voxelSizeM, data: new Uint8Array(grid.data) };
}

export function gridsEqual(a: LabelGrid, b: LabelGrid): boolean {
  if (a.dims[0] !== b.dims[0] || a.dims[1] !== b.dims[1] || a.dims[2] !== b.dims[2]) {
    return false;
  }
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}

export function regionContains(region: Region, x: number, y: number, z: number): boolean {
  const [lo, hi] = region;
  return x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1] && z >= lo[2] && z < hi[2];
}

/** Voxels where the two grids differ but no region covers them. */
export function diffOutsideRegions(before: LabelGrid, after: LabelGrid,
                                   regions: Region[]): [number, number, number][] {
  const [nx, ny, nz] = before.dims;
  const out: [number, number, number][] = [];
  for (let x = 0; x < nx; x++) {
    for (let y = 0; y < ny; y++) {
      for (let z = 0; z < nz; z++) {
        if (voxelAt(before, x, y, z) === voxelAt(after, x, y, z)) continue;
        if (!regions.some((r) => regionContains(r, x, y, z))) out.push([x, y, z]);
      }
    }
  }
  return out;
}
