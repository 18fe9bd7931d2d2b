/** Two-click box selection over the top-down view.
 *
 * The first click anchors one corner, the second completes the box;
 * corners snap to integer semantic voxels and are normalized to
 * min/max order before a request is built, so click order never
 * matters. Boxes span the full height by default, adjustable with the
 * height range; resize/move ops take a second box for the target.
 */

import type { EditOp, EditRequestBody, Region } from "./types.js";

export interface GridClick {
  x: number;
  z: number;
}

export interface BoxSelection {
  op: EditOp;
  category: number;
  yLo: number;
  yHi: number;
  first: GridClick | null;
  second: GridClick | null;
  targetFirst: GridClick | null;
  targetSecond: GridClick | null;
}

export function newSelection(op: EditOp, category: number, heightVoxels: number): BoxSelection {
  return {
    op,
    category,
    yLo: 0,
    yHi: heightVoxels,
    first: null,
    second: null,
    targetFirst: null,
    targetSecond: null,
  };
}

export function opNeedsTarget(op: EditOp): boolean {
  return op === "resize" || op === "move";
}

export function opNeedsCategory(op: EditOp): boolean {
  return op === "add" || op === "replace";
}

/** Record one click; returns true once the selection is complete. */
export function addClick(selection: BoxSelection, click: GridClick): boolean {
  const snapped = { x: Math.floor(click.x), z: Math.floor(click.z) };
  if (selection.first === null) selection.first = snapped;
  else if (selection.second === null) selection.second = snapped;
  else if (selection.targetFirst === null) selection.targetFirst = snapped;
  else if (selection.targetSecond === null) selection.targetSecond = snapped;
  return selectionComplete(selection);
}

export function selectionComplete(selection: BoxSelection): boolean {
  const primary = selection.first !== null && selection.second !== null;
  if (!opNeedsTarget(selection.op)) return primary;
  return primary && selection.targetFirst !== null && selection.targetSecond !== null;
}

function normalized(a: GridClick, b: GridClick, yLo: number, yHi: number): Region {
  // Min/max per axis, then exclusive upper bounds: clicking the same
  // voxel twice still selects that one voxel.
  const xLo = Math.min(a.x, b.x);
  const xHi = Math.max(a.x, b.x) + 1;
  const zLo = Math.min(a.z, b.z);
  const zHi = Math.max(a.z, b.z) + 1;
  return [[xLo, yLo, zLo], [xHi, yHi, zHi]];
}

export function primaryRegion(selection: BoxSelection): Region | null {
  if (selection.first === null || selection.second === null) return null;
  return normalized(selection.first, selection.second, selection.yLo, selection.yHi);
}

export function targetRegion(selection: BoxSelection): Region | null {
  if (selection.targetFirst === null || selection.targetSecond === null) return null;
  return normalized(selection.targetFirst, selection.targetSecond,
                    selection.yLo, selection.yHi);
}

/** The wire request for a complete selection, or null if clicks remain. */
export function buildEditRequest(selection: BoxSelection): EditRequestBody | null {
  const region = primaryRegion(selection);
  if (region === null) return null;
  const body: EditRequestBody = { op: selection.op, region };
  if (opNeedsCategory(selection.op)) body.category = selection.category;
  if (opNeedsTarget(selection.op)) {
    const target = targetRegion(selection);
    if (target === null) return null;
    body.target_region = target;
  }
  return body;
}
