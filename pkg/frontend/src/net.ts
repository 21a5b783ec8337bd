/** Server communication with single-in-flight request coalescing. */

import { CameraPose } from "./orbit.js";
import { FrameInfo, RenderSettings } from "./state.js";

export interface CameraInfo extends CameraPose {
  id: number;
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export interface Frame {
  /** PNG bytes of the rendered view. */
  png: Uint8Array;
  info: FrameInfo;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; body?: string; headers?: Record<string, string> },
) => Promise<{
  ok: boolean;
  status: number;
  headers: { get(name: string): string | null };
  arrayBuffer(): Promise<ArrayBuffer>;
  json(): Promise<unknown>;
}>;

export class RenderClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch as unknown as FetchLike,
  ) {}

  async cameras(): Promise<CameraInfo[]> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/cameras`);
    if (!resp.ok) {
      throw new Error(`cameras request failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as CameraInfo[];
  }

  async render(pose: CameraPose, settings: RenderSettings): Promise<Frame> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        rotation: pose.rotation,
        translation: pose.translation,
        width: settings.resolution,
        height: settings.resolution,
        k: settings.k,
        fast: settings.fast,
        s: settings.s,
      }),
    });
    if (!resp.ok) {
      throw new Error(`render failed: HTTP ${resp.status}`);
    }
    const selectedHeader = resp.headers.get("X-Selected-Views") ?? "";
    const selected = selectedHeader
      .split(",")
      .filter((x) => x.length > 0)
      .map((x) => Number(x));
    const millis = Number(resp.headers.get("X-Render-Millis") ?? "0");
    const png = new Uint8Array(await resp.arrayBuffer());
    return { png, info: { selected, millis } };
  }

  async weights(
    pose: CameraPose,
    settings: RenderSettings,
  ): Promise<Record<string, number>> {
    const params = new URLSearchParams({
      rotation: pose.rotation.join(","),
      translation: pose.translation.join(","),
      width: String(settings.resolution),
      height: String(settings.resolution),
      k: String(settings.k),
    });
    const resp = await this.fetchImpl(`${this.baseUrl}/api/weights?${params}`);
    if (!resp.ok) {
      throw new Error(`weights failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as Record<string, number>;
  }
}

/**
 * Serializes an async job so at most one runs at a time. New submissions
 * while a job is in flight replace any queued job; only the newest queued
 * job runs next (rapid pose changes coalesce to the latest).
 */
export class Coalescer<T> {
  private inFlight = false;
  private queued: (() => Promise<T>) | null = null;
  private _dropped = 0;

  /** Number of submissions replaced before they ever started. */
  get dropped(): number {
    return this._dropped;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  submit(
    job: () => Promise<T>,
    onResult: (value: T) => void,
    onError: (err: unknown) => void,
  ): void {
    if (this.inFlight) {
      if (this.queued !== null) {
        this._dropped += 1;
      }
      this.queued = job;
      // the queued job reuses the in-flight completion's callbacks
      this.queuedCallbacks = [onResult, onError];
      return;
    }
    this.run(job, onResult, onError);
  }

  private queuedCallbacks: [(value: T) => void, (err: unknown) => void] | null =
    null;

  private run(
    job: () => Promise<T>,
    onResult: (value: T) => void,
    onError: (err: unknown) => void,
  ): void {
    this.inFlight = true;
    job()
      .then(onResult, onError)
      .finally(() => {
        this.inFlight = false;
        if (this.queued !== null && this.queuedCallbacks !== null) {
          const next = this.queued;
          const [res, rej] = this.queuedCallbacks;
          this.queued = null;
          this.queuedCallbacks = null;
          this.run(next, res, rej);
        }
      });
  }
}
