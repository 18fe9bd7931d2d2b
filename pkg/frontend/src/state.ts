/** Editor store: session lifecycle, polling, and the optimistic overlay.
 *
 * State machine: idle -> creating -> synthesizing -> ready, with ready
 * <-> synthesizing around every edit and a terminal error state. The
 * transition table is enforced, so ready is only ever reached from
 * synthesizing — a fast server can't skip the busy state, and the page
 * always gets a render in between.
 *
 * The server is the single source of truth: the store never writes into
 * its grid. A submitted edit shows as an overlay composited at render
 * time; the overlay is dropped when the refreshed grid arrives (or the
 * server rejects the edit). While a job runs, controls are disabled
 * (canEdit() false) — mirroring the server's 409 discipline — and a 409
 * from a lost race puts the store back into synthesizing to re-poll.
 * Network failures during polling retry with exponential backoff.
 */

import { ApiClient, ApiError } from "./client.js";
import type { LabelGrid } from "./grid.js";
import { composite, type Overlay } from "./render.js";
import type {
  EditRequestBody,
  MeshPayload,
  ProgressPayload,
  SceneCreateBody,
  SceneDescription,
} from "./types.js";

export type UiState = "idle" | "creating" | "synthesizing" | "ready" | "error";

const TRANSITIONS: Record<UiState, UiState[]> = {
  idle: ["creating"],
  creating: ["synthesizing", "idle", "error"],
  synthesizing: ["ready", "error"],
  ready: ["synthesizing", "error"],
  error: [],
};

export interface StoreOptions {
  client: ApiClient;
  /** Milliseconds between progress polls. */
  pollIntervalMs?: number;
  /** First retry delay after a network failure; doubles up to the cap. */
  backoffBaseMs?: number;
  backoffCapMs?: number;
  /** Injectable so tests run without real timers. */
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class EditorStore {
  private readonly client: ApiClient;
  private readonly pollIntervalMs: number;
  private readonly backoffBaseMs: number;
  private readonly backoffCapMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly listeners = new Set<() => void>();
  private polling = false;

  state: UiState = "idle";
  session: SceneDescription | null = null;
  progress: ProgressPayload | null = null;
  grid: LabelGrid | null = null;
  categories: Record<string, string> = {};
  mesh: MeshPayload | null = null;
  overlay: Overlay | null = null;
  /** Inline, non-fatal message (rejected edit, failed create). */
  notice: string | null = null;
  /** Fatal session error (server job failure). */
  fatal: string | null = null;

  constructor(options: StoreOptions) {
    this.client = options.client;
    this.pollIntervalMs = options.pollIntervalMs ?? 500;
    this.backoffBaseMs = options.backoffBaseMs ?? 1000;
    this.backoffCapMs = options.backoffCapMs ?? 15000;
    this.sleep = options.sleep ?? defaultSleep;
  }

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  private setState(next: UiState): void {
    if (!TRANSITIONS[this.state].includes(next)) {
      throw new Error(`illegal state transition ${this.state} -> ${next}`);
    }
    this.state = next;
    this.notify();
  }

  /** Edits are allowed only with a committed scene and no job running. */
  canEdit(): boolean {
    return this.state === "ready";
  }

  /** The grid the page should draw: server truth plus any pending overlay. */
  displayedGrid(): LabelGrid | null {
    if (this.grid === null) return null;
    return composite(this.grid, this.overlay);
  }

  async createScene(body: SceneCreateBody): Promise<void> {
    if (this.state !== "idle") {
      throw new Error("a session already exists in this store");
    }
    this.notice = null;
    this.setState("creating");
    let described: SceneDescription;
    try {
      described = await this.client.createScene(body);
    } catch (exc) {
      this.notice = exc instanceof ApiError ? exc.detail : String(exc);
      this.setState("idle");
      return;
    }
    this.session = described;
    this.setState("synthesizing");
    await this.pollUntilSettled();
  }

  async submitEdit(edit: EditRequestBody, overlay: Overlay): Promise<void> {
    if (!this.canEdit()) {
      throw new Error("edits are disabled while a job is running");
    }
    const sid = this.sessionId();
    this.notice = null;
    this.overlay = overlay;
    this.notify();
    try {
      await this.client.submitEdit(sid, edit);
    } catch (exc) {
      this.overlay = null; // the edit did not land; drop the optimistic view
      if (exc instanceof ApiError && exc.status === 409) {
        // Lost a race: the server is busy. Controls stay disabled and the
        // poll loop picks the session back up.
        this.setState("synthesizing");
        await this.pollUntilSettled();
        return;
      }
      this.notice = exc instanceof ApiError ? exc.detail : String(exc);
      this.notify();
      return;
    }
    this.setState("synthesizing");
    await this.pollUntilSettled();
  }

  private sessionId(): string {
    if (this.session === null) throw new Error("no session");
    return this.session.id;
  }

  private async pollUntilSettled(): Promise<void> {
    if (this.polling) return;
    this.polling = true;
    try {
      let backoff = this.backoffBaseMs;
      while (this.state === "synthesizing") {
        let payload: ProgressPayload;
        try {
          payload = await this.client.progress(this.sessionId());
          backoff = this.backoffBaseMs;
        } catch (exc) {
          if (exc instanceof ApiError) throw exc; // HTTP errors are not retried
          await this.sleep(backoff); // network loss: retry with backoff
          backoff = Math.min(backoff * 2, this.backoffCapMs);
          continue;
        }
        this.progress = payload;
        if (payload.state === "error") {
          this.fatal = payload.error ?? "synthesis failed";
          this.setState("error");
          return;
        }
        if (payload.state === "ready") {
          await this.refreshScene();
          this.overlay = null; // server truth now includes the edit
          this.setState("ready");
          return;
        }
        this.notify(); // progress counters moved; re-render
        await this.sleep(this.pollIntervalMs);
      }
    } finally {
      this.polling = false;
    }
  }

  private async refreshScene(): Promise<void> {
    const sid = this.sessionId();
    const semantic = await this.client.semantic(sid);
    this.grid = semantic.grid;
    this.categories = semantic.categories;
    try {
      this.mesh = await this.client.mesh(sid);
    } catch {
      this.mesh = null; // surface may be empty; the grid view still works
    }
  }
}
