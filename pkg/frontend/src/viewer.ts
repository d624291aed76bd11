/**
 * DOM wiring: canvas display of streamed frames, orbit/zoom input, the
 * zoom-rectangle tool with prompt entry, a layer breadcrumb sidebar, and a
 * pending-synthesis indicator. All scene state lives server-side; this
 * client only sends camera and zoom messages.
 */

import { CameraState, fromLayerCamera } from "./camera.js";
import { CameraControls } from "./controls.js";
import { ViewerConnection, serviceUrl } from "./connection.js";
import type { Manifest } from "./protocol.js";
import { Rect, buildZoomMessage, clampRect } from "./zoomrect.js";

export interface ViewerElements {
  canvas: HTMLCanvasElement;
  overlay: HTMLCanvasElement;
  sidebar: HTMLElement;
  promptInput: HTMLInputElement;
  status: HTMLElement;
  toast: HTMLElement;
}

export class Viewer {
  private connection: ViewerConnection;
  private controls: CameraControls | null = null;
  private manifest: Manifest | null = null;
  private selection: Rect | null = null;
  private dragStart: [number, number] | null = null;
  private rectMode = false;
  private seed = 1;

  constructor(private readonly el: ViewerElements, query: string) {
    this.connection = new ViewerConnection(
      serviceUrl(query),
      {
        onOpen: () => {
          this.setStatus("connected");
          this.connection.requestLayers();
        },
        onClose: () => this.setStatus("disconnected - retrying"),
        onFrame: (header, png) => this.showFrame(png),
        onManifest: (manifest) => this.applyManifest(manifest),
        onCommitted: (msg) => {
          this.showToast(`layer ${msg.layer} committed`);
          this.selection = null;
          this.drawOverlay();
          this.connection.requestLayers();
          this.setStatus("connected");
        },
        onError: (msg) => this.showToast(`${msg.code}: ${msg.msg}`),
      },
      (url) => new WebSocket(url) as never,
    );
  }

  start(): void {
    this.connection.connect();
    this.bindInput();
  }

  private setStatus(text: string): void {
    this.el.status.textContent = text;
  }

  private showToast(text: string): void {
    this.el.toast.textContent = text;
    this.el.toast.classList.add("visible");
    setTimeout(() => this.el.toast.classList.remove("visible"), 2500);
  }

  private applyManifest(manifest: Manifest): void {
    this.manifest = manifest;
    this.el.sidebar.replaceChildren();
    for (const layer of manifest.layers) {
      const item = document.createElement("button");
      item.className = "layer";
      item.textContent = `#${layer.index} scale ${layer.scale_index}` +
        (layer.prompt ? ` - ${layer.prompt}` : "");
      item.onclick = () => this.jumpToLayer(layer.index);
      this.el.sidebar.appendChild(item);
    }
    if (this.controls === null && manifest.layers.length > 0) {
      this.jumpToLayer(0);
    }
  }

  private jumpToLayer(index: number): void {
    if (!this.manifest) return;
    const layer = this.manifest.layers[index];
    const state = fromLayerCamera(
      layer.camera, this.el.canvas.width, this.el.canvas.height, 4.0);
    if (this.controls === null) {
      this.controls = new CameraControls(
        state,
        (msg) => this.connection.sendCamera(msg),
        (flush) => requestAnimationFrame(flush),
      );
      this.controls.jumpTo(state);
    } else {
      this.controls.jumpTo(state);
    }
  }

  private showFrame(png: ArrayBuffer): void {
    const blob = new Blob([png], { type: "image/png" });
    const url = URL.createObjectURL(blob);
    const image = new Image();
    image.onload = () => {
      const ctx = this.el.canvas.getContext("2d")!;
      ctx.drawImage(image, 0, 0, this.el.canvas.width, this.el.canvas.height);
      URL.revokeObjectURL(url);
    };
    image.src = url;
  }

  private drawOverlay(): void {
    const ctx = this.el.overlay.getContext("2d")!;
    ctx.clearRect(0, 0, this.el.overlay.width, this.el.overlay.height);
    if (this.selection) {
      ctx.strokeStyle = "#7df";
      ctx.lineWidth = 2;
      ctx.setLineDash([6, 4]);
      ctx.strokeRect(this.selection.x, this.selection.y,
                     this.selection.width, this.selection.height);
    }
  }

  setRectMode(on: boolean): void {
    this.rectMode = on;
    if (!on) {
      this.selection = null;
      this.drawOverlay();
    }
  }

  commitZoom(): void {
    if (!this.selection || !this.manifest || !this.controls) {
      this.showToast("draw a zoom rectangle first");
      return;
    }
    if (this.connection.pendingSynthesis) {
      this.showToast("busy: synthesis already pending");
      return;
    }
    const msg = buildZoomMessage(
      this.manifest, this.controls.state, this.selection,
      this.el.promptInput.value, this.seed++);
    if (this.connection.sendZoom(msg)) {
      this.setStatus(`synthesizing layer under #${msg.layer}...`);
    } else {
      this.showToast("busy: synthesis already pending");
    }
  }

  private bindInput(): void {
    const canvas = this.el.overlay;
    canvas.addEventListener("pointerdown", (ev) => {
      this.dragStart = [ev.offsetX, ev.offsetY];
      canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!this.dragStart) return;
      if (this.rectMode) {
        this.selection = clampRect({
          x: this.dragStart[0],
          y: this.dragStart[1],
          width: ev.offsetX - this.dragStart[0],
          height: ev.offsetY - this.dragStart[1],
        }, canvas.width, canvas.height);
        this.drawOverlay();
      } else if (this.controls) {
        this.controls.handle({ kind: "drag", dx: ev.movementX, dy: ev.movementY });
      }
    });
    canvas.addEventListener("pointerup", () => {
      this.dragStart = null;
    });
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      if (this.controls) {
        this.controls.handle({
          kind: "wheel",
          notches: -Math.sign(ev.deltaY),
          modifier: ev.shiftKey,
        });
      }
    }, { passive: false });
  }
}
