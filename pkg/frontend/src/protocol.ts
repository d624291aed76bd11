/**
 * Wire protocol: JSON text frames plus binary image frames whose 16-byte
 * little-endian header carries (frame id, scene version, width, height).
 */

export interface CameraMessage {
  type: "camera";
  pose: number[]; // row-major 4x4 world-to-camera
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  w: number;
  h: number;
}

export interface ZoomMessage {
  type: "zoom";
  layer: number;
  center: [number, number];
  factor: number;
  prompt: string;
  seed: number;
}

export interface LayersRequest {
  type: "layers";
}

export interface LayerInfo {
  index: number;
  scale_index: number;
  parent: number | null;
  prompt: string;
  surfels: number;
  camera: { pose: number[]; fx: number; fy: number; cx: number; cy: number; w: number; h: number };
}

export interface Manifest {
  version: number;
  total_surfels: number;
  layers: LayerInfo[];
}

export interface LayersReply {
  type: "layers";
  manifest: Manifest;
}

export interface CommittedMessage {
  type: "committed";
  layer: number;
  version: number;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  msg: string;
}

export type ServerMessage = LayersReply | CommittedMessage | ErrorMessage;

export interface FrameHeader {
  frameId: number;
  version: number;
  width: number;
  height: number;
}

export const FRAME_HEADER_BYTES = 16;

export function decodeFrameHeader(data: ArrayBuffer): FrameHeader {
  if (data.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`binary frame too short: ${data.byteLength} bytes`);
  }
  const view = new DataView(data);
  return {
    frameId: view.getUint32(0, true),
    version: view.getUint32(4, true),
    width: view.getUint32(8, true),
    height: view.getUint32(12, true),
  };
}

export function framePayload(data: ArrayBuffer): ArrayBuffer {
  return data.slice(FRAME_HEADER_BYTES);
}

export function parseServerMessage(text: string): ServerMessage {
  const msg = JSON.parse(text);
  if (msg.type === "layers" || msg.type === "committed" || msg.type === "error") {
    return msg as ServerMessage;
  }
  throw new Error(`unknown server message type: ${msg.type}`);
}
