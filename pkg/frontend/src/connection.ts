/**
 * Protocol client with latest-wins camera coalescing and frame-order
 * enforcement. At most one camera request is in flight; newer cameras
 * replace the pending one. Binary frames that arrive out of order (frame id
 * not strictly increasing) are dropped rather than displayed.
 */

import {
  CameraMessage,
  CommittedMessage,
  ErrorMessage,
  FrameHeader,
  Manifest,
  ZoomMessage,
  decodeFrameHeader,
  framePayload,
  parseServerMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  binaryType: string;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ConnectionEvents {
  onFrame?: (header: FrameHeader, png: ArrayBuffer) => void;
  onCommitted?: (msg: CommittedMessage) => void;
  onError?: (msg: ErrorMessage) => void;
  onManifest?: (manifest: Manifest) => void;
  onOpen?: () => void;
  onClose?: () => void;
  onDroppedFrame?: (header: FrameHeader) => void;
}

export class ViewerConnection {
  private socket: SocketLike | null = null;
  private pendingCamera: CameraMessage | null = null;
  private inFlight = false;
  private lastFrameId = -1;
  connected = false;
  lastVersion = 0;
  pendingSynthesis = false;

  constructor(
    private readonly url: string,
    private readonly events: ConnectionEvents,
    private readonly factory: SocketFactory,
  ) {}

  connect(): void {
    const socket = this.factory(this.url);
    socket.binaryType = "arraybuffer";
    socket.onopen = () => {
      this.connected = true;
      this.events.onOpen?.();
      this.flushCamera();
    };
    socket.onclose = () => {
      this.connected = false;
      this.inFlight = false;
      this.events.onClose?.();
    };
    socket.onerror = () => socket.close();
    socket.onmessage = (ev) => this.handleMessage(ev.data);
    this.socket = socket;
  }

  close(): void {
    this.socket?.close();
  }

  /** Queue a camera; only the newest pending camera is ever sent. */
  sendCamera(msg: CameraMessage): void {
    this.pendingCamera = msg;
    this.flushCamera();
  }

  sendZoom(msg: ZoomMessage): boolean {
    if (!this.connected || this.pendingSynthesis) {
      return false;
    }
    this.pendingSynthesis = true;
    this.socket!.send(JSON.stringify(msg));
    return true;
  }

  requestLayers(): void {
    if (this.connected) {
      this.socket!.send(JSON.stringify({ type: "layers" }));
    }
  }

  private flushCamera(): void {
    if (!this.connected || this.inFlight || this.pendingCamera === null) {
      return;
    }
    const msg = this.pendingCamera;
    this.pendingCamera = null;
    this.inFlight = true;
    this.socket!.send(JSON.stringify(msg));
  }

  private handleMessage(data: unknown): void {
    if (typeof data === "string") {
      const msg = parseServerMessage(data);
      if (msg.type === "committed") {
        this.pendingSynthesis = false;
        this.lastVersion = Math.max(this.lastVersion, msg.version);
        this.events.onCommitted?.(msg);
      } else if (msg.type === "error") {
        if (msg.code === "busy" || msg.code === "synthesis_failed") {
          this.pendingSynthesis = false;
        }
        this.events.onError?.(msg);
      } else if (msg.type === "layers") {
        this.events.onManifest?.(msg.manifest);
      }
      return;
    }
    const buffer = data as ArrayBuffer;
    const header = decodeFrameHeader(buffer);
    this.inFlight = false;
    if (header.frameId <= this.lastFrameId) {
      this.events.onDroppedFrame?.(header);
      this.flushCamera();
      return;
    }
    this.lastFrameId = header.frameId;
    this.lastVersion = Math.max(this.lastVersion, header.version);
    this.events.onFrame?.(header, framePayload(buffer));
    this.flushCamera();
  }
}

export function serviceUrl(query: string, fallbackHost = "127.0.0.1", fallbackPort = 8000): string {
  const params = new URLSearchParams(query);
  const host = params.get("host") ?? fallbackHost;
  const port = params.get("port") ?? String(fallbackPort);
  return `ws://${host}:${port}/ws`;
}
