/**
 * Zoom-rectangle selection: drawn on the canvas over the current view, then
 * converted into a zoom message against the governing layer's creation view.
 * The zoom factor follows the rectangle size, clamped to the default of 8.
 */

import type { CameraState } from "./camera.js";
import type { LayerInfo, Manifest, ZoomMessage } from "./protocol.js";

export const DEFAULT_ZOOM_FACTOR = 8;

export interface Rect {
  x: number;
  y: number;
  width: number;
  height: number;
}

export function clampRect(rect: Rect, canvasWidth: number, canvasHeight: number): Rect {
  const x0 = Math.max(0, Math.min(rect.x, canvasWidth));
  const y0 = Math.max(0, Math.min(rect.y, canvasHeight));
  const x1 = Math.max(0, Math.min(rect.x + rect.width, canvasWidth));
  const y1 = Math.max(0, Math.min(rect.y + rect.height, canvasHeight));
  return { x: Math.min(x0, x1), y: Math.min(y0, y1), width: Math.abs(x1 - x0), height: Math.abs(y1 - y0) };
}

/**
 * The governing layer for a view ray: the finest-scale layer whose creation
 * image contains the ray. Cameras along a zoom chain share a pose, so rays
 * map between them through intrinsics alone.
 */
export function governingLayer(
  manifest: Manifest,
  camera: CameraState,
  canvasPx: [number, number],
): { layer: LayerInfo; pixel: [number, number] } {
  const rayX = (canvasPx[0] - camera.cx) / camera.fx;
  const rayY = (canvasPx[1] - camera.cy) / camera.fy;
  const candidates = [...manifest.layers].sort(
    (a, b) => b.camera.fx - a.camera.fx,
  );
  for (const layer of candidates) {
    const cam = layer.camera;
    const u = cam.fx * rayX + cam.cx;
    const v = cam.fy * rayY + cam.cy;
    if (u >= 0 && u < cam.w && v >= 0 && v < cam.h) {
      return { layer, pixel: [u, v] };
    }
  }
  const root = manifest.layers[0];
  return {
    layer: root,
    pixel: [
      Math.min(Math.max(root.camera.fx * rayX + root.camera.cx, 0), root.camera.w - 1e-6),
      Math.min(Math.max(root.camera.fy * rayY + root.camera.cy, 0), root.camera.h - 1e-6),
    ],
  };
}

export function zoomFactorFor(rect: Rect, canvasWidth: number, canvasHeight: number): number {
  if (rect.width <= 0 || rect.height <= 0) {
    return DEFAULT_ZOOM_FACTOR;
  }
  const factor = Math.min(canvasWidth / rect.width, canvasHeight / rect.height);
  return Math.min(Math.max(factor, 1.5), DEFAULT_ZOOM_FACTOR);
}

export function buildZoomMessage(
  manifest: Manifest,
  camera: CameraState,
  rect: Rect,
  prompt: string,
  seed: number,
): ZoomMessage {
  const clamped = clampRect(rect, camera.width, camera.height);
  const center: [number, number] = [
    clamped.x + clamped.width / 2,
    clamped.y + clamped.height / 2,
  ];
  const { layer, pixel } = governingLayer(manifest, camera, center);
  return {
    type: "zoom",
    layer: layer.index,
    center: pixel,
    factor: zoomFactorFor(clamped, camera.width, camera.height),
    prompt,
    seed,
  };
}
