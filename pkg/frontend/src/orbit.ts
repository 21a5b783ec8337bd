/** Orbit-camera parameterization and conversion to server pose format. */

export interface OrbitPose {
  /** World-space point the camera looks at. */
  target: [number, number, number];
  /** Distance from the target, > 0. */
  radius: number;
  /** Rotation around the world y axis, radians. */
  azimuth: number;
  /** Tilt toward -y, radians, strictly inside (-pi/2, pi/2). */
  elevation: number;
}

export interface CameraPose {
  /** Row-major 3x3 world-to-camera rotation. */
  rotation: number[];
  /** World-to-camera translation. */
  translation: [number, number, number];
}

const EPS = 1e-12;
export const MAX_ELEVATION = Math.PI / 2 - 1e-3;

export function clampOrbit(pose: OrbitPose): OrbitPose {
  return {
    target: [...pose.target],
    radius: Math.max(pose.radius, 1e-3),
    azimuth: pose.azimuth,
    elevation: Math.min(Math.max(pose.elevation, -MAX_ELEVATION), MAX_ELEVATION),
  };
}

function sub(a: number[], b: number[]): [number, number, number] {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function dot(a: number[], b: number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function cross(a: number[], b: number[]): [number, number, number] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: number[]): number {
  return Math.sqrt(dot(a, a));
}

function scale(a: number[], s: number): [number, number, number] {
  return [a[0] * s, a[1] * s, a[2] * s];
}

/** Camera world position for an orbit pose. */
export function orbitPosition(pose: OrbitPose): [number, number, number] {
  const { target, radius, azimuth, elevation } = pose;
  const ce = Math.cos(elevation);
  return [
    target[0] + radius * ce * Math.sin(azimuth),
    target[1] - radius * Math.sin(elevation),
    target[2] - radius * ce * Math.cos(azimuth),
  ];
}

/**
 * World-to-camera pose for a camera at `position` looking at `target`,
 * image y running along world up (y-down image convention).
 */
export function lookAt(
  position: number[],
  target: number[],
  up: number[] = [0, 1, 0],
): CameraPose {
  const fwd = sub(target, position);
  const n = norm(fwd);
  if (n < EPS) {
    throw new Error("camera position coincides with target");
  }
  const z = scale(fwd, 1 / n);
  const yRaw = sub(up, scale(z, dot(up, z)));
  const ny = norm(yRaw);
  if (ny < EPS) {
    throw new Error("up vector parallel to viewing direction");
  }
  const y = scale(yRaw, 1 / ny);
  const x = cross(y, z);
  const rotation = [...x, ...y, ...z];
  const translation: [number, number, number] = [
    -dot(x, position),
    -dot(y, position),
    -dot(z, position),
  ];
  return { rotation, translation };
}

/** Server pose (rotation, translation) for an orbit pose. */
export function orbitToCamera(pose: OrbitPose): CameraPose {
  return lookAt(orbitPosition(pose), pose.target);
}

/**
 * Orbit parameters that reproduce a stored camera's position while
 * looking at `target`. The rotation is re-derived by look-at, so cameras
 * that already look at `target` round-trip exactly.
 */
export function cameraToOrbit(
  camera: CameraPose,
  target: [number, number, number],
): OrbitPose {
  const r = camera.rotation;
  const t = camera.translation;
  // position = -R^T t
  const position: [number, number, number] = [
    -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
    -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
    -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
  ];
  const offset = sub(position, target);
  const radius = norm(offset);
  if (radius < EPS) {
    throw new Error("camera sits on the orbit target");
  }
  const elevation = Math.asin(Math.min(Math.max(-offset[1] / radius, -1), 1));
  const azimuth = Math.atan2(offset[0], -offset[2]);
  return clampOrbit({ target: [...target], radius, azimuth, elevation });
}
