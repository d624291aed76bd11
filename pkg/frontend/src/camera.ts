/**
 * Client-side camera state. The pose is a row-major 4x4 world-to-camera
 * rigid transform; +z looks forward, +y down (image convention). Orbit
 * rotates the eye about the look-at target, dolly moves along the view
 * axis, and focal zoom is exponential (one wheel notch = x1.1).
 */

import type { CameraMessage } from "./protocol.js";

export const WHEEL_ZOOM_STEP = 1.1;

export type Mat3 = number[]; // row-major 3x3
export type Vec3 = [number, number, number];

export interface CameraState {
  pose: number[]; // row-major 4x4
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  targetDistance: number; // orbit pivot distance along the optical axis
}

function rot(pose: number[]): Mat3 {
  return [pose[0], pose[1], pose[2], pose[4], pose[5], pose[6], pose[8], pose[9], pose[10]];
}

function trans(pose: number[]): Vec3 {
  return [pose[3], pose[7], pose[11]];
}

function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

function matTVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
    m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
    m[2] * v[0] + m[5] * v[1] + m[8] * v[2],
  ];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      for (let k = 0; k < 3; k++) {
        out[3 * i + j] += a[3 * i + k] * b[3 * k + j];
      }
    }
  }
  return out;
}

function axisAngle(axis: Vec3, angle: number): Mat3 {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  const [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const t = 1 - c;
  return [
    t * x * x + c, t * x * y - s * z, t * x * z + s * y,
    t * x * y + s * z, t * y * y + c, t * y * z - s * x,
    t * x * z - s * y, t * y * z + s * x, t * z * z + c,
  ];
}

export function cameraCenter(state: CameraState): Vec3 {
  const R = rot(state.pose);
  const t = trans(state.pose);
  const c = matTVec(R, t);
  return [-c[0], -c[1], -c[2]];
}

export function viewAxes(state: CameraState): { right: Vec3; down: Vec3; forward: Vec3 } {
  const R = rot(state.pose);
  return {
    right: [R[0], R[1], R[2]],
    down: [R[3], R[4], R[5]],
    forward: [R[6], R[7], R[8]],
  };
}

export function orbitTarget(state: CameraState): Vec3 {
  const eye = cameraCenter(state);
  const { forward } = viewAxes(state);
  const d = state.targetDistance;
  return [eye[0] + forward[0] * d, eye[1] + forward[1] * d, eye[2] + forward[2] * d];
}

function rebuildPose(R: Mat3, eye: Vec3): number[] {
  const t = matVec(R, eye);
  return [
    R[0], R[1], R[2], -t[0],
    R[3], R[4], R[5], -t[1],
    R[6], R[7], R[8], -t[2],
    0, 0, 0, 1,
  ];
}

/** Rotate the eye about the target: yaw about the down axis, pitch about right. */
export function orbit(state: CameraState, yawRad: number, pitchRad: number): CameraState {
  const target = orbitTarget(state);
  const eye = cameraCenter(state);
  const { right, down } = viewAxes(state);
  const rotation = matMul(axisAngle(down, yawRad), axisAngle(right, pitchRad));
  const offset: Vec3 = [eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]];
  const spun = matVec(rotation, offset);
  const newEye: Vec3 = [target[0] + spun[0], target[1] + spun[1], target[2] + spun[2]];
  const R = rot(state.pose);
  const newR = matMul(R, transpose(rotation));
  return { ...state, pose: rebuildPose(newR, newEye) };
}

function transpose(m: Mat3): Mat3 {
  return [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]];
}

/** Move the eye along the optical axis; factor < 1 approaches the target. */
export function dolly(state: CameraState, factor: number): CameraState {
  const target = orbitTarget(state);
  const eye = cameraCenter(state);
  const offset: Vec3 = [eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]];
  const newEye: Vec3 = [
    target[0] + offset[0] * factor,
    target[1] + offset[1] * factor,
    target[2] + offset[2] * factor,
  ];
  const R = rot(state.pose);
  return {
    ...state,
    pose: rebuildPose(R, newEye),
    targetDistance: state.targetDistance * factor,
  };
}

/** Exponential focal zoom: each wheel notch multiplies the focal by 1.1. */
export function zoomFocal(state: CameraState, notches: number): CameraState {
  const factor = Math.pow(WHEEL_ZOOM_STEP, notches);
  return { ...state, fx: state.fx * factor, fy: state.fy * factor };
}

export function toCameraMessage(state: CameraState): CameraMessage {
  return {
    type: "camera",
    pose: [...state.pose],
    fx: state.fx,
    fy: state.fy,
    cx: state.cx,
    cy: state.cy,
    w: state.width,
    h: state.height,
  };
}

export function fromLayerCamera(
  cam: { pose: number[]; fx: number; fy: number; cx: number; cy: number; w: number; h: number },
  canvasWidth: number,
  canvasHeight: number,
  targetDistance: number,
): CameraState {
  // rescale intrinsics to the canvas, preserving the field of view
  const scale = canvasWidth / cam.w;
  return {
    pose: [...cam.pose],
    fx: cam.fx * scale,
    fy: cam.fy * scale,
    cx: canvasWidth / 2,
    cy: canvasHeight / 2,
    width: canvasWidth,
    height: canvasHeight,
    targetDistance,
  };
}
