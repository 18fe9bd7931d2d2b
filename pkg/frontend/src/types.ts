/** Wire types for the scene service JSON API. */

export type EditOp = "add" | "remove" | "replace" | "resize" | "move";

/** Inclusive lower, exclusive upper corner in semantic voxel coordinates. */
export type Region = [[number, number, number], [number, number, number]];

export interface EditRequestBody {
  op: EditOp;
  region: Region;
  category?: number;
  target_region?: Region;
}

export interface SceneCreateBody {
  captions: string[];
  layout: [number, number];
  seed: number;
  edit_steps?: number | null;
}

export type JobState = "synthesizing" | "ready" | "error";

export interface SceneDescription {
  id: string;
  state: JobState;
  error: string | null;
  captions: string[];
  layout: [number, number];
  seed: number;
  edit_steps: number | null;
  preset: string;
  semantic_dims: [number, number, number];
  geometric_dims: [number, number, number];
  sem_voxel_m: number;
  geo_voxel_m: number;
  committed: boolean;
  edits_applied: number;
}

export interface ProgressPayload {
  state: JobState;
  stage: string | null;
  completed: number;
  total: number;
  error: string | null;
}

export interface SemanticPayload {
  dims: [number, number, number];
  voxel_size_m: number;
  origin: [number, number, number];
  dtype: "uint8";
  order: "C";
  labels_b64: string;
  categories: Record<string, string>;
}

export interface MeshPayload {
  vertex_count: number;
  face_count: number;
  vertices: [number, number, number][];
  faces: [number, number, number][];
  level_voxels: number;
  voxel_size_m: number;
}

export interface EditAccepted {
  id: string;
  state: JobState;
  op: EditOp;
}
