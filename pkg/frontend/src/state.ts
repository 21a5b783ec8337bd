/** Viewer state and its serialization to the URL fragment. */

import { OrbitPose, clampOrbit } from "./orbit.js";

export interface RenderSettings {
  k: number;
  fast: boolean;
  s: number;
  resolution: number;
}

export interface FrameInfo {
  selected: number[];
  millis: number;
}

export type ConnectionStatus = "idle" | "loading" | "ok" | "error";

export interface ViewerState {
  pose: OrbitPose;
  settings: RenderSettings;
  lastFrame: FrameInfo | null;
  status: ConnectionStatus;
}

export const DEFAULT_SETTINGS: RenderSettings = {
  k: 9,
  fast: false,
  s: 1,
  resolution: 128,
};

export function defaultState(): ViewerState {
  return {
    pose: {
      target: [0, 0, 0],
      radius: 3.5,
      azimuth: 0,
      elevation: Math.asin(0.3 / 3.5),
    },
    settings: { ...DEFAULT_SETTINGS },
    lastFrame: null,
    status: "idle",
  };
}

const FRAGMENT_KEYS = [
  "tx", "ty", "tz", "r", "az", "el", "k", "fast", "s", "res",
] as const;

/** Pose and options as a URL fragment (leading '#' not included). */
export function encodeFragment(state: ViewerState): string {
  const p = state.pose;
  const o = state.settings;
  const round = (x: number) => String(Math.round(x * 1e6) / 1e6);
  const pairs: [string, string][] = [
    ["tx", round(p.target[0])],
    ["ty", round(p.target[1])],
    ["tz", round(p.target[2])],
    ["r", round(p.radius)],
    ["az", round(p.azimuth)],
    ["el", round(p.elevation)],
    ["k", String(o.k)],
    ["fast", o.fast ? "1" : "0"],
    ["s", String(o.s)],
    ["res", String(o.resolution)],
  ];
  return pairs.map(([k, v]) => `${k}=${v}`).join("&");
}

/** Restore pose and options from a URL fragment; unknown keys ignored. */
export function decodeFragment(fragment: string, base?: ViewerState): ViewerState {
  const state = base ?? defaultState();
  const raw = fragment.startsWith("#") ? fragment.slice(1) : fragment;
  const values = new Map<string, string>();
  for (const part of raw.split("&")) {
    const eq = part.indexOf("=");
    if (eq > 0) {
      values.set(part.slice(0, eq), part.slice(eq + 1));
    }
  }
  const num = (key: (typeof FRAGMENT_KEYS)[number], fallback: number) => {
    const v = values.get(key);
    if (v === undefined) return fallback;
    const parsed = Number(v);
    return Number.isFinite(parsed) ? parsed : fallback;
  };
  const pose = clampOrbit({
    target: [
      num("tx", state.pose.target[0]),
      num("ty", state.pose.target[1]),
      num("tz", state.pose.target[2]),
    ],
    radius: num("r", state.pose.radius),
    azimuth: num("az", state.pose.azimuth),
    elevation: num("el", state.pose.elevation),
  });
  const settings: RenderSettings = {
    k: Math.max(1, Math.round(num("k", state.settings.k))),
    fast: values.get("fast") === "1" ||
      (values.get("fast") === undefined && state.settings.fast),
    s: Math.max(1, Math.round(num("s", state.settings.s))),
    resolution: Math.max(16, Math.round(num("res", state.settings.resolution))),
  };
  return { pose, settings, lastFrame: null, status: "idle" };
}
