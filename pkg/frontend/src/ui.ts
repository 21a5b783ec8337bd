/** DOM wiring: controls, overlays, and the fetch/coalesce loop. */

import { cameraToOrbit, clampOrbit, orbitToCamera } from "./orbit.js";
import { CameraInfo, Coalescer, Frame, RenderClient } from "./net.js";
import {
  ViewerState,
  decodeFragment,
  defaultState,
  encodeFragment,
} from "./state.js";

export interface ViewerDocument {
  getElementById(id: string): HTMLElement | null;
  createElement(tag: string): HTMLElement;
}

export interface ViewerOptions {
  /** Current URL fragment at startup (with or without '#'). */
  fragment?: string;
  /** Called with the new fragment whenever the state changes. */
  onFragment?: (fragment: string) => void;
}

function bytesToDataUrl(png: Uint8Array): string {
  let binary = "";
  for (let i = 0; i < png.length; i++) {
    binary += String.fromCharCode(png[i]);
  }
  const b64 =
    typeof btoa !== "undefined"
      ? btoa(binary)
      : Buffer.from(png).toString("base64");
  return `data:image/png;base64,${b64}`;
}

export class Viewer {
  state: ViewerState;
  cameras: CameraInfo[] = [];
  renders = 0;
  private readonly coalescer = new Coalescer<{
    frame: Frame;
    weights: Record<string, number>;
  }>();

  constructor(
    private readonly doc: ViewerDocument,
    private readonly client: RenderClient,
    private readonly options: ViewerOptions = {},
  ) {
    this.state = options.fragment
      ? decodeFragment(options.fragment)
      : defaultState();
  }

  private el(id: string): HTMLElement {
    const node = this.doc.getElementById(id);
    if (!node) {
      throw new Error(`missing viewer element #${id}`);
    }
    return node;
  }

  /** Load the camera list, build the jump buttons, fetch the first frame. */
  async start(): Promise<void> {
    this.bindControls();
    try {
      this.cameras = await this.client.cameras();
    } catch (err) {
      this.setStatus("error", `server unreachable: ${String(err)}`);
      return;
    }
    const list = this.el("cameras");
    list.innerHTML = "";
    for (const cam of this.cameras) {
      const btn = this.doc.createElement("button") as HTMLButtonElement;
      btn.textContent = `cam ${cam.id}`;
      btn.id = `camera-${cam.id}`;
      btn.addEventListener("click", () => this.jumpToCamera(cam.id));
      list.appendChild(btn);
    }
    this.requestFrame();
  }

  jumpToCamera(id: number): void {
    const cam = this.cameras.find((c) => c.id === id);
    if (!cam) {
      return;
    }
    this.state.pose = cameraToOrbit(cam, this.state.pose.target);
    this.stateChanged();
  }

  orbitBy(dAzimuth: number, dElevation: number, dRadius = 0): void {
    const p = this.state.pose;
    this.state.pose = clampOrbit({
      target: p.target,
      radius: p.radius + dRadius,
      azimuth: p.azimuth + dAzimuth,
      elevation: p.elevation + dElevation,
    });
    this.stateChanged();
  }

  private bindControls(): void {
    const k = this.el("k") as HTMLInputElement;
    const fast = this.el("fast") as HTMLInputElement;
    const s = this.el("s") as HTMLInputElement;
    const res = this.el("res") as HTMLInputElement;
    k.value = String(this.state.settings.k);
    fast.checked = this.state.settings.fast;
    s.value = String(this.state.settings.s);
    res.value = String(this.state.settings.resolution);
    k.addEventListener("change", () => {
      this.state.settings.k = Math.max(1, Number(k.value) || 1);
      this.stateChanged();
    });
    fast.addEventListener("change", () => {
      this.state.settings.fast = fast.checked;
      this.stateChanged();
    });
    s.addEventListener("change", () => {
      this.state.settings.s = Math.max(1, Number(s.value) || 1);
      this.stateChanged();
    });
    res.addEventListener("change", () => {
      this.state.settings.resolution = Math.max(16, Number(res.value) || 16);
      this.stateChanged();
    });
    const bind = (id: string, fn: () => void) =>
      this.el(id).addEventListener("click", fn);
    bind("orbit-left", () => this.orbitBy(-0.1, 0));
    bind("orbit-right", () => this.orbitBy(0.1, 0));
    bind("orbit-up", () => this.orbitBy(0, 0.1));
    bind("orbit-down", () => this.orbitBy(0, -0.1));
    bind("orbit-in", () => this.orbitBy(0, 0, -0.25));
    bind("orbit-out", () => this.orbitBy(0, 0, 0.25));
  }

  /** One state change = one fragment write + one (coalesced) re-fetch. */
  stateChanged(): void {
    this.options.onFragment?.(encodeFragment(this.state));
    this.requestFrame();
  }

  requestFrame(): void {
    const pose = orbitToCamera(this.state.pose);
    const settings = { ...this.state.settings };
    this.setStatus("loading", "rendering…");
    this.coalescer.submit(
      async () => {
        const frame = await this.client.render(pose, settings);
        const weights = await this.client.weights(pose, settings);
        return { frame, weights };
      },
      ({ frame, weights }) => this.showFrame(frame, weights),
      (err) => this.setStatus("error", `render failed: ${String(err)}`),
    );
  }

  private showFrame(frame: Frame, weights: Record<string, number>): void {
    this.renders += 1;
    this.state.lastFrame = frame.info;
    const img = this.el("frame") as HTMLImageElement;
    img.src = bytesToDataUrl(frame.png);
    const badge = this.el("badge");
    badge.textContent = frame.info.selected.length
      ? `views ${frame.info.selected.join(", ")} · ${frame.info.millis.toFixed(0)} ms`
      : "no views selected";
    this.renderWeightBars(weights);
    this.setStatus("ok", "");
  }

  private renderWeightBars(weights: Record<string, number>): void {
    const box = this.el("weights");
    box.innerHTML = "";
    const entries = Object.entries(weights).sort(
      (a, b) => Number(a[0]) - Number(b[0]),
    );
    const max = Math.max(...entries.map(([, w]) => w), 1e-12);
    for (const [vid, w] of entries) {
      const row = this.doc.createElement("div");
      row.className = "weight-row";
      const label = this.doc.createElement("span");
      label.textContent = `view ${vid}`;
      const bar = this.doc.createElement("div");
      bar.className = "weight-bar";
      bar.style.width = `${Math.round((100 * w) / max)}%`;
      bar.title = w.toExponential(3);
      row.appendChild(label);
      row.appendChild(bar);
      box.appendChild(row);
    }
  }

  private setStatus(kind: ViewerState["status"], message: string): void {
    this.state.status = kind;
    const banner = this.el("status");
    banner.textContent = message;
    banner.className = `status-${kind}`;
  }
}
