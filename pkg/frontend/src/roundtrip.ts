/** Scripted add -> move -> remove session against a live server.
 *
 * Drives the same store the page uses (headless: no DOM), and after
 * every step checks that (a) the UI grid is byte-equal to the grid the
 * server reports, and (b) the displayed map changed only inside the
 * regions named by the edit. Prints one PASS/FAIL line per check and
 * exits nonzero on any failure.
 *
 *   node dist/roundtrip.js [serverUrl] [caption]
 */

import { ApiClient } from "./client.js";
import { cloneGrid, diffOutsideRegions, gridsEqual, voxelAt, type LabelGrid } from "./grid.js";
import type { Overlay } from "./render.js";
import { EditorStore, type UiState } from "./state.js";
import type { EditRequestBody, Region } from "./types.js";

function findFreeBoxes(grid: LabelGrid, size: [number, number, number],
                       count: number): Region[] {
  const [nx, ny, nz] = grid.dims;
  const [sx, sy, sz] = size;
  const found: Region[] = [];
  const overlaps = (a: Region, b: Region) =>
    a[0][0] < b[1][0] && b[0][0] < a[1][0] &&
    a[0][1] < b[1][1] && b[0][1] < a[1][1] &&
    a[0][2] < b[1][2] && b[0][2] < a[1][2];
  for (let x = 0; x + sx <= nx && found.length < count; x++) {
    for (let z = 0; z + sz <= nz && found.length < count; z++) {
      for (let y = 0; y + sy <= ny && found.length < count; y++) {
        let free = true;
        for (let dx = 0; dx < sx && free; dx++) {
          for (let dy = 0; dy < sy && free; dy++) {
            for (let dz = 0; dz < sz && free; dz++) {
              if (voxelAt(grid, x + dx, y + dy, z + dz) !== 0) free = false;
            }
          }
        }
        const box: Region = [[x, y, z], [x + sx, y + sy, z + sz]];
        if (free && !found.some((other) => overlaps(box, other))) {
          found.push(box);
        }
      }
    }
  }
  if (found.length < count) {
    throw new Error(`scene too crowded: found ${found.length}/${count} free boxes`);
  }
  return found;
}

let failures = 0;

function check(label: string, ok: boolean, detail = ""): void {
  if (!ok) failures += 1;
  console.log(`${ok ? "PASS" : "FAIL"}: ${label}${detail ? ` (${detail})` : ""}`);
}

async function main(): Promise<void> {
  const serverUrl = process.argv[2] ?? "http://127.0.0.1:8000";
  const caption = process.argv[3] ?? "a room with a chair and a table, enclosed by walls";
  const client = new ApiClient(serverUrl);
  const store = new EditorStore({ client, pollIntervalMs: 250 });

  const states: UiState[] = [store.state];
  store.subscribe(() => {
    if (store.state !== states[states.length - 1]) states.push(store.state);
  });

  console.log(`round-trip against ${serverUrl}`);
  await store.createScene({ captions: [caption], layout: [1, 1], seed: 7 });
  if (store.state !== "ready" || store.grid === null) {
    check("scene creation reached ready", false, `state=${store.state} ${store.fatal ?? ""}`);
    process.exit(1);
  }
  check("scene creation reached ready", true);

  const sid = (await client.describe(store.session!.id)).id;
  const [boxA, boxB] = findFreeBoxes(store.grid, [3, 2, 3], 2) as [Region, Region];
  const category = 9; // table

  const steps: { label: string; edit: EditRequestBody; overlay: Overlay; regions: Region[] }[] = [
    {
      label: "add",
      edit: { op: "add", region: boxA, category },
      overlay: { op: "add", region: boxA, category },
      regions: [boxA],
    },
    {
      label: "move",
      edit: { op: "move", region: boxA, target_region: boxB },
      overlay: { op: "move", region: boxA, category: 0, targetRegion: boxB, targetCategory: category },
      regions: [boxA, boxB],
    },
    {
      label: "remove",
      edit: { op: "remove", region: boxB },
      overlay: { op: "remove", region: boxB, category: 0 },
      regions: [boxB],
    },
  ];

  for (const step of steps) {
    const before = cloneGrid(store.displayedGrid()!);
    await store.submitEdit(step.edit, step.overlay);
    check(`${step.label}: store settled back to ready`, store.state === "ready",
          store.fatal ?? store.notice ?? "");

    const serverView = await client.semantic(sid);
    const uiGrid = store.grid!;
    check(`${step.label}: UI grid equals server grid`,
          gridsEqual(uiGrid, serverView.grid));

    const displayed = store.displayedGrid()!;
    const leaked = diffOutsideRegions(before, displayed, step.regions);
    check(`${step.label}: displayed map changed only inside the edited regions`,
          leaked.length === 0,
          leaked.length > 0 ? `${leaked.length} voxels leaked, first at ${leaked[0]}` : "");
  }

  for (let i = 1; i < states.length; i++) {
    if (states[i] === "ready" && states[i - 1] !== "synthesizing") {
      check("every ready state was entered from synthesizing", false,
            `${states[i - 1]} -> ready`);
    }
  }
  check("state sequence legal", true, states.join(" -> "));

  process.exit(failures === 0 ? 0 : 1);
}

main().catch((exc) => {
  console.error(`FAIL: round-trip aborted: ${exc}`);
  process.exit(1);
});
