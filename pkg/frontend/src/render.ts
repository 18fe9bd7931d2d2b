/** Pure rasterization of label grids to RGBA pixel buffers.
 *
 * No DOM here: functions return width/height/pixels, and the page blits
 * them through putImageData. That keeps every rendering rule (projection,
 * palette, overlay compositing) testable without a canvas.
 */

import { CATEGORY_COLORS } from "./colors.js";
import { cloneGrid, voxelAt, type LabelGrid } from "./grid.js";
import type { EditOp, Region } from "./types.js";

export interface PixelBuffer {
  width: number;   // x extent in voxels
  height: number;  // z extent in voxels
  pixels: Uint8ClampedArray<ArrayBuffer>; // RGBA rows in z-major order
}

function paint(pixels: Uint8ClampedArray, offset: number, channel: number): void {
  const color = CATEGORY_COLORS[channel] ?? [255, 0, 255];
  pixels[offset] = color[0];
  pixels[offset + 1] = color[1];
  pixels[offset + 2] = color[2];
  pixels[offset + 3] = 255;
}

/** Top-down projection: each (x, z) column shows its highest occupied voxel. */
export function renderTopDown(grid: LabelGrid): PixelBuffer {
  const [nx, ny, nz] = grid.dims;
  const pixels = new Uint8ClampedArray(nx * nz * 4);
  for (let z = 0; z < nz; z++) {
    for (let x = 0; x < nx; x++) {
      let label = 0;
      for (let y = ny - 1; y >= 0; y--) {
        const v = voxelAt(grid, x, y, z);
        if (v !== 0) { label = v; break; }
      }
      paint(pixels, (z * nx + x) * 4, label);
    }
  }
  return { width: nx, height: nz, pixels };
}

/** Horizontal slice at one height: the labels of the y = sliceY plane. */
export function renderSlice(grid: LabelGrid, sliceY: number): PixelBuffer {
  const [nx, ny, nz] = grid.dims;
  if (sliceY < 0 || sliceY >= ny) {
    throw new Error(`slice ${sliceY} outside height range 0..${ny - 1}`);
  }
  const pixels = new Uint8ClampedArray(nx * nz * 4);
  for (let z = 0; z < nz; z++) {
    for (let x = 0; x < nx; x++) {
      paint(pixels, (z * nx + x) * 4, voxelAt(grid, x, sliceY, z));
    }
  }
  return { width: nx, height: nz, pixels };
}

export interface Overlay {
  op: EditOp;
  region: Region;
  /** Channel painted into `region` (free for remove; the moved/resized
   *  object's channel for target regions). */
  category: number;
  targetRegion?: Region;
  targetCategory?: number;
}

function fillRegion(grid: LabelGrid, region: Region, channel: number): void {
  const [lo, hi] = region;
  for (let x = lo[0]; x < hi[0]; x++) {
    for (let y = lo[1]; y < hi[1]; y++) {
      for (let z = lo[2]; z < hi[2]; z++) {
        grid.data[(x * grid.dims[1] + y) * grid.dims[2] + z] = channel;
      }
    }
  }
}

/** Server grid + optimistic overlay -> the grid the page should display.
 *  The base grid is never mutated; the overlay lives only in the copy. */
export function composite(base: LabelGrid, overlay: Overlay | null): LabelGrid {
  if (overlay === null) return base;
  const shown = cloneGrid(base);
  fillRegion(shown, overlay.region, overlay.category);
  if (overlay.targetRegion) {
    fillRegion(shown, overlay.targetRegion, overlay.targetCategory ?? overlay.category);
  }
  return shown;
}
