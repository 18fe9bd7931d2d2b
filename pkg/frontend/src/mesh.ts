/** Software projection of the server mesh for the preview pane.
 *
 * The service supplies an indexed triangle mesh (vertices in meters);
 * the preview draws it with an orthographic camera, painter-sorted
 * triangles, and one-light Lambert shading. Pure math in, draw list
 * out — the page turns DrawTriangle items into canvas paths.
 */

import type { MeshPayload } from "./types.js";

export interface DrawTriangle {
  /** Screen-space vertices, already scaled to the viewport. */
  points: [number, number][];
  /** Grayscale-blended fill color. */
  fill: string;
}

export interface Camera {
  /** Rotation around the vertical axis, radians. */
  yaw: number;
  /** Downward tilt, radians. */
  pitch: number;
}

function rotate([x, y, z]: [number, number, number], camera: Camera): [number, number, number] {
  const cy = Math.cos(camera.yaw), sy = Math.sin(camera.yaw);
  const cp = Math.cos(camera.pitch), sp = Math.sin(camera.pitch);
  const rx = cy * x + sy * z;
  const rz = -sy * x + cy * z;
  const ry = cp * y - sp * rz;
  const depth = sp * y + cp * rz;
  return [rx, ry, depth];
}

export function projectMesh(mesh: MeshPayload, camera: Camera,
                            viewW: number, viewH: number): DrawTriangle[] {
  if (mesh.face_count === 0) return [];
  const rotated = mesh.vertices.map((v) => rotate(v, camera));
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  for (const [x, y] of rotated) {
    minX = Math.min(minX, x); maxX = Math.max(maxX, x);
    minY = Math.min(minY, y); maxY = Math.max(maxY, y);
  }
  const spanX = Math.max(maxX - minX, 1e-6);
  const spanY = Math.max(maxY - minY, 1e-6);
  const scale = 0.9 * Math.min(viewW / spanX, viewH / spanY);
  const toScreen = ([x, y]: [number, number, number]): [number, number] => [
    (x - (minX + maxX) / 2) * scale + viewW / 2,
    viewH / 2 - (y - (minY + maxY) / 2) * scale,
  ];

  const faces: { depth: number; shade: number; points: [number, number][] }[] = [];
  for (const [a, b, c] of mesh.faces) {
    const va = rotated[a]!, vb = rotated[b]!, vc = rotated[c]!;
    const u: [number, number, number] = [vb[0] - va[0], vb[1] - va[1], vb[2] - va[2]];
    const w: [number, number, number] = [vc[0] - va[0], vc[1] - va[1], vc[2] - va[2]];
    const n: [number, number, number] = [
      u[1] * w[2] - u[2] * w[1],
      u[2] * w[0] - u[0] * w[2],
      u[0] * w[1] - u[1] * w[0],
    ];
    const len = Math.hypot(n[0], n[1], n[2]);
    if (len === 0) continue;
    // Headlight Lambert term; both winding orders light the same.
    const shade = Math.abs(n[2]) / len;
    faces.push({
      depth: (va[2] + vb[2] + vc[2]) / 3,
      shade,
      points: [toScreen(va), toScreen(vb), toScreen(vc)],
    });
  }
  faces.sort((p, q) => p.depth - q.depth); // far first
  return faces.map(({ shade, points }) => {
    const tone = Math.round(70 + 170 * shade);
    return { points, fill: `rgb(${tone}, ${tone}, ${Math.round(tone * 0.95)})` };
  });
}
