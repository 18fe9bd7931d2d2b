/** Page wiring: DOM in, store calls out. All rendering logic lives in
 * render.ts / mesh.ts; this file only blits pixel buffers, reflects
 * store state into controls, and turns clicks into voxel coordinates.
 */

import { ApiClient } from "./client.js";
import { cssColor, legendEntries } from "./colors.js";
import { voxelAt, type LabelGrid } from "./grid.js";
import { projectMesh, type Camera } from "./mesh.js";
import { renderSlice, renderTopDown, type Overlay, type PixelBuffer } from "./render.js";
import {
  addClick,
  buildEditRequest,
  newSelection,
  opNeedsCategory,
  opNeedsTarget,
  primaryRegion,
  selectionComplete,
  targetRegion,
  type BoxSelection,
} from "./selection.js";
import { EditorStore } from "./state.js";
import type { EditOp, Region } from "./types.js";

const SCALE = 10; // screen pixels per voxel

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function blit(canvas: HTMLCanvasElement, buffer: PixelBuffer): void {
  canvas.width = buffer.width * SCALE;
  canvas.height = buffer.height * SCALE;
  const raw = new OffscreenCanvas(buffer.width, buffer.height);
  const rawCtx = raw.getContext("2d")!;
  rawCtx.putImageData(new ImageData(buffer.pixels, buffer.width, buffer.height), 0, 0);
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(raw, 0, 0, canvas.width, canvas.height);
}

function strokeRegion(canvas: HTMLCanvasElement, region: Region, color: string): void {
  const ctx = canvas.getContext("2d")!;
  const [lo, hi] = region;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.strokeRect(lo[0] * SCALE, lo[2] * SCALE,
                 (hi[0] - lo[0]) * SCALE, (hi[2] - lo[2]) * SCALE);
}

function dominantCategory(grid: LabelGrid, region: Region): number {
  const counts = new Map<number, number>();
  const [lo, hi] = region;
  for (let x = lo[0]; x < hi[0]; x++) {
    for (let y = lo[1]; y < hi[1]; y++) {
      for (let z = lo[2]; z < hi[2]; z++) {
        const v = voxelAt(grid, x, y, z);
        if (v >= 2) counts.set(v, (counts.get(v) ?? 0) + 1);
      }
    }
  }
  let best = 0, bestCount = 0;
  for (const [channel, count] of counts) {
    if (count > bestCount) { best = channel; bestCount = count; }
  }
  return best;
}

function overlayFor(selection: BoxSelection, grid: LabelGrid): Overlay | null {
  const region = primaryRegion(selection);
  if (region === null) return null;
  const op = selection.op;
  if (op === "add" || op === "replace") {
    return { op, region, category: selection.category };
  }
  if (op === "remove") {
    return { op, region, category: 0 };
  }
  const target = targetRegion(selection);
  if (target === null) return null;
  const moved = dominantCategory(grid, region);
  return { op, region, category: 0, targetRegion: target, targetCategory: moved };
}

export function startApp(baseUrl: string): EditorStore {
  const store = new EditorStore({ client: new ApiClient(baseUrl) });

  const topDown = el<HTMLCanvasElement>("top-down");
  const slice = el<HTMLCanvasElement>("slice");
  const meshCanvas = el<HTMLCanvasElement>("mesh-preview");
  const sliceY = el<HTMLInputElement>("slice-y");
  const sliceLabel = el<HTMLSpanElement>("slice-label");
  const statusLine = el<HTMLSpanElement>("status");
  const noticeLine = el<HTMLDivElement>("notice");
  const legendBox = el<HTMLDivElement>("legend");
  const captionsInput = el<HTMLTextAreaElement>("captions");
  const rowsInput = el<HTMLInputElement>("layout-rows");
  const colsInput = el<HTMLInputElement>("layout-cols");
  const seedInput = el<HTMLInputElement>("seed");
  const createButton = el<HTMLButtonElement>("create");
  const opSelect = el<HTMLSelectElement>("edit-op");
  const categorySelect = el<HTMLSelectElement>("edit-category");
  const yLoInput = el<HTMLInputElement>("edit-ylo");
  const yHiInput = el<HTMLInputElement>("edit-yhi");
  const submitButton = el<HTMLButtonElement>("submit-edit");
  const resetButton = el<HTMLButtonElement>("reset-edit");
  const selectionLine = el<HTMLSpanElement>("selection-state");
  const yawInput = el<HTMLInputElement>("mesh-yaw");

  let selection: BoxSelection | null = null;
  const camera: Camera = { yaw: 0.7, pitch: 0.5 };

  function heightOf(): number {
    return store.session?.semantic_dims[1] ?? 0;
  }

  function freshSelection(): BoxSelection {
    const sel = newSelection(opSelect.value as EditOp,
                             Number(categorySelect.value), heightOf());
    const lo = Number(yLoInput.value), hi = Number(yHiInput.value);
    if (Number.isFinite(lo) && Number.isFinite(hi) && hi > lo) {
      sel.yLo = Math.max(0, Math.floor(lo));
      sel.yHi = Math.min(heightOf(), Math.floor(hi));
    }
    return sel;
  }

  function describeSelection(): string {
    if (selection === null) return "click two corners on the top-down view";
    const region = primaryRegion(selection);
    if (region === null) return "one corner picked — click the opposite corner";
    if (opNeedsTarget(selection.op) && targetRegion(selection) === null) {
      return "box picked — now click two corners for the target";
    }
    const [lo, hi] = region;
    return `box [${lo.join(", ")}] → [${hi.join(", ")}]`;
  }

  function drawMesh(): void {
    const ctx = meshCanvas.getContext("2d")!;
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, meshCanvas.width, meshCanvas.height);
    if (store.mesh === null) return;
    for (const tri of projectMesh(store.mesh, camera, meshCanvas.width, meshCanvas.height)) {
      ctx.beginPath();
      ctx.moveTo(tri.points[0]![0], tri.points[0]![1]);
      ctx.lineTo(tri.points[1]![0], tri.points[1]![1]);
      ctx.lineTo(tri.points[2]![0], tri.points[2]![1]);
      ctx.closePath();
      ctx.fillStyle = tri.fill;
      ctx.fill();
    }
  }

  function render(): void {
    const busy = store.state === "synthesizing" || store.state === "creating";
    createButton.disabled = store.state !== "idle";
    const editable = store.canEdit();
    for (const control of [opSelect, categorySelect, yLoInput, yHiInput,
                           submitButton, resetButton]) {
      control.disabled = !editable;
    }
    submitButton.disabled = !editable || selection === null ||
      !selectionComplete(selection);

    const stage = store.progress
      ? ` — ${store.progress.stage ?? "queued"} ${store.progress.completed}/${store.progress.total}`
      : "";
    statusLine.textContent = store.state + (busy ? stage : "");
    statusLine.dataset.state = store.state;
    noticeLine.textContent = store.fatal ?? store.notice ?? "";
    selectionLine.textContent = describeSelection();

    const grid = store.displayedGrid();
    if (grid === null) return;

    const height = grid.dims[1];
    sliceY.max = String(height - 1);
    const y = Math.min(Number(sliceY.value), height - 1);
    sliceLabel.textContent = `y = ${y}`;
    blit(topDown, renderTopDown(grid));
    blit(slice, renderSlice(grid, y));
    if (selection !== null) {
      const region = primaryRegion(selection);
      if (region !== null) strokeRegion(topDown, region, "#ff3366");
      const target = targetRegion(selection);
      if (target !== null) strokeRegion(topDown, target, "#3366ff");
    }
    if (Object.keys(store.categories).length > 0 && legendBox.childElementCount === 0) {
      for (const entry of legendEntries(store.categories)) {
        const item = document.createElement("div");
        item.className = "legend-entry";
        const swatch = document.createElement("span");
        swatch.className = "swatch";
        swatch.style.backgroundColor = cssColor(entry.color);
        item.append(swatch, ` ${entry.channel} ${entry.name}`);
        legendBox.append(item);
      }
    }
    drawMesh();
  }

  store.subscribe(render);

  createButton.addEventListener("click", () => {
    const captions = captionsInput.value.split("\n").map((line) => line.trim());
    const rows = Math.max(1, Number(rowsInput.value) || 1);
    const cols = Math.max(1, Number(colsInput.value) || 1);
    void store.createScene({
      captions,
      layout: [rows, cols],
      seed: Number(seedInput.value) || 0,
    });
  });

  topDown.addEventListener("click", (event) => {
    if (!store.canEdit()) return;
    const grid = store.displayedGrid();
    if (grid === null) return;
    if (selection === null) selection = freshSelection();
    const bounds = topDown.getBoundingClientRect();
    const x = Math.floor((event.clientX - bounds.left) / bounds.width * grid.dims[0]);
    const z = Math.floor((event.clientY - bounds.top) / bounds.height * grid.dims[2]);
    addClick(selection, { x, z });
    render();
  });

  submitButton.addEventListener("click", () => {
    if (selection === null || store.grid === null) return;
    const request = buildEditRequest(selection);
    const overlay = overlayFor(selection, store.grid);
    if (request === null || overlay === null) return;
    selection = null;
    void store.submitEdit(request, overlay);
  });

  resetButton.addEventListener("click", () => {
    selection = null;
    render();
  });

  for (const input of [opSelect, categorySelect, yLoInput, yHiInput]) {
    input.addEventListener("change", () => {
      selection = null;
      categorySelect.disabled = !opNeedsCategory(opSelect.value as EditOp);
      render();
    });
  }

  sliceY.addEventListener("input", render);
  yawInput.addEventListener("input", () => {
    camera.yaw = Number(yawInput.value);
    drawMesh();
  });

  render();
  return store;
}
