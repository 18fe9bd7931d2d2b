/** Typed HTTP client for the scene service.
 *
 * fetch is injected so tests and the round-trip script can substitute a
 * scripted transport; error responses become ApiError values carrying
 * the status and the server's `detail` string for inline display.
 */

import { decodeLabelGrid, type LabelGrid } from "./grid.js";
import type {
  EditAccepted,
  EditRequestBody,
  MeshPayload,
  ProgressPayload,
  SceneCreateBody,
  SceneDescription,
  SemanticPayload,
} from "./types.js";

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  arrayBuffer(): Promise<ArrayBuffer>;
}>;

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function errorFrom(status: number, response: { json(): Promise<unknown> }): Promise<ApiError> {
  let detail = `request failed with status ${status}`;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the generic detail
  }
  return new ApiError(status, detail);
}

export interface SemanticResponse {
  grid: LabelGrid;
  categories: Record<string, string>;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private async request(path: string, init?: Parameters<FetchLike>[1]): Promise<unknown> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) throw await errorFrom(response.status, response);
    return response.json();
  }

  async createScene(body: SceneCreateBody): Promise<SceneDescription> {
    return (await this.request("/scenes", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    })) as SceneDescription;
  }

  async describe(sid: string): Promise<SceneDescription> {
    return (await this.request(`/scenes/${sid}`)) as SceneDescription;
  }

  async progress(sid: string): Promise<ProgressPayload> {
    return (await this.request(`/scenes/${sid}/progress`)) as ProgressPayload;
  }

  async semantic(sid: string): Promise<SemanticResponse> {
    const payload = (await this.request(`/scenes/${sid}/semantic`)) as SemanticPayload;
    return { grid: decodeLabelGrid(payload), categories: payload.categories };
  }

  async mesh(sid: string): Promise<MeshPayload> {
    return (await this.request(`/scenes/${sid}/geometry?format=mesh`)) as MeshPayload;
  }

  async snapshot(sid: string): Promise<ArrayBuffer> {
    const response = await this.fetchFn(`${this.baseUrl}/scenes/${sid}/snapshot`);
    if (!response.ok) throw await errorFrom(response.status, response);
    return response.arrayBuffer();
  }

  async submitEdit(sid: string, edit: EditRequestBody): Promise<EditAccepted> {
    return (await this.request(`/scenes/${sid}/edits`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(edit),
    })) as EditAccepted;
  }
}
