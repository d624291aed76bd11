/**
 * Input handling: drag orbits, wheel zooms the focal length, wheel with a
 * modifier dollies. Camera messages coalesce to at most one per animation
 * frame regardless of the input event rate.
 */

import { CameraState, dolly, orbit, toCameraMessage, zoomFocal } from "./camera.js";
import type { CameraMessage } from "./protocol.js";

export const ORBIT_RADIANS_PER_PIXEL = 0.005;
export const DOLLY_STEP = 1.05;

export interface PointerInput {
  kind: "drag";
  dx: number; // pixels
  dy: number;
}

export interface WheelInput {
  kind: "wheel";
  notches: number; // positive = zoom in
  modifier: boolean; // dolly instead of focal zoom
}

export type ControlInput = PointerInput | WheelInput;

type Scheduler = (flush: () => void) => void;

export class CameraControls {
  private dirty = false;
  private scheduled = false;
  enabled = true;

  constructor(
    public state: CameraState,
    private readonly emit: (msg: CameraMessage) => void,
    private readonly schedule: Scheduler,
  ) {}

  /** Apply an input event; the resulting camera message is batched. */
  handle(input: ControlInput): void {
    if (!this.enabled) {
      return;
    }
    if (input.kind === "drag") {
      if (input.dx === 0 && input.dy === 0) {
        return;
      }
      this.state = orbit(
        this.state,
        -input.dx * ORBIT_RADIANS_PER_PIXEL,
        -input.dy * ORBIT_RADIANS_PER_PIXEL,
      );
    } else if (input.modifier) {
      this.state = dolly(this.state, Math.pow(DOLLY_STEP, -input.notches));
    } else {
      this.state = zoomFocal(this.state, input.notches);
    }
    this.dirty = true;
    if (!this.scheduled) {
      this.scheduled = true;
      this.schedule(() => this.flush());
    }
  }

  /** Replace the camera outright (e.g. jumping to a layer's creation view). */
  jumpTo(state: CameraState): void {
    this.state = state;
    this.dirty = true;
    if (!this.scheduled) {
      this.scheduled = true;
      this.schedule(() => this.flush());
    }
  }

  private flush(): void {
    this.scheduled = false;
    if (!this.dirty) {
      return;
    }
    this.dirty = false;
    this.emit(toCameraMessage(this.state));
  }
}
