/**
 * Scripted end-to-end session against a real local server: orbit, then a
 * zoom rectangle with a prompt, commit, and a committed notification, with
 * monotone frame ids and an interactive frame rate at 256x256 throughout.
 * The session drives the viewer's own protocol/camera/zoom-rect modules
 * over a Node WebSocket.
 */

import { execFile, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { promisify } from "node:util";

import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { CameraState, fromLayerCamera, orbit, toCameraMessage } from "../src/camera.js";
import { ViewerConnection } from "../src/connection.js";
import type { FrameHeader, Manifest } from "../src/protocol.js";
import { buildZoomMessage } from "../src/zoomrect.js";

const execFileAsync = promisify(execFile);
const PORT = 8471;
const PKG_ROOT = join(dirname(fileURLToPath(import.meta.url)), "..", "..");

const BUILD_SCENE = `
import sys
import numpy as np
from zoomsplat.diffopt import OptimConfig, optimize_layer
from zoomsplat.geometry import DepthMap, identity_camera
from zoomsplat.sceneio import save_scene
from zoomsplat.scene import MultiScaleScene
from zoomsplat.surfelize import pixel_aligned_surfels
from zoomsplat.synth import DetailRequest, ProceduralProvider, SynthConfig, synthesize_scale

size = 64
cam = identity_camera(size, size, fx=float(size))
ys = np.linspace(0, 1, size)[:, None]
xs = np.linspace(0, 1, size)[None, :]
image = np.clip(0.5
    + 0.1 * np.sin(2 * np.pi * 2 * xs)[..., None]
    + 0.1 * np.cos(2 * np.pi * 8 * ys)[..., None] * np.ones((1, 1, 3)), 0.05, 0.95)
image = np.broadcast_to(image, (size, size, 3)).copy()
depth = DepthMap(4.0 + 0.3 * np.sin(2 * xs) + 0.3 * np.cos(1.5 * ys))
scene = MultiScaleScene()
scene.add_layer(pixel_aligned_surfels(image, depth, cam))
optimize_layer(scene, 0, [(image, cam)], OptimConfig(steps=80))
provider = ProceduralProvider()
config = SynthConfig(aux_views=1, optim=OptimConfig(steps=30))
for level in range(2):
    request = DetailRequest(parent_layer=level, zoom_center=(size / 2, size / 2),
                            zoom_factor=8.0, prompt=f"level {level}", seed=level)
    synthesize_scale(scene, request, provider, config=config)
save_scene(scene, sys.argv[1])
print("scene ready")
`;

interface Session {
  conn: ViewerConnection;
  frames: FrameHeader[];
  manifests: Manifest[];
  committed: Array<{ layer: number; version: number }>;
  errors: string[];
  waitFrame(count: number, timeoutMs?: number): Promise<void>;
  waitManifest(count: number, timeoutMs?: number): Promise<void>;
  waitCommitted(timeoutMs: number): Promise<void>;
}

function startSession(): Promise<Session> {
  const frames: FrameHeader[] = [];
  const manifests: Manifest[] = [];
  const committed: Array<{ layer: number; version: number }> = [];
  const errors: string[] = [];

  const waitFor = (ready: () => boolean, timeoutMs: number) =>
    new Promise<void>((resolve, reject) => {
      const start = Date.now();
      const poll = () => {
        if (ready()) return resolve();
        if (Date.now() - start > timeoutMs) return reject(new Error("timed out"));
        setTimeout(poll, 10);
      };
      poll();
    });

  return new Promise((resolve, reject) => {
    const conn = new ViewerConnection(
      `ws://127.0.0.1:${PORT}/ws`,
      {
        onOpen: () =>
          resolve({
            conn, frames, manifests, committed, errors,
            waitFrame: (n, t = 15000) => waitFor(() => frames.length >= n, t),
            waitManifest: (n, t = 15000) => waitFor(() => manifests.length >= n, t),
            waitCommitted: (t) => waitFor(() => committed.length > 0, t),
          }),
        onFrame: (header) => frames.push(header),
        onManifest: (m) => manifests.push(m),
        onCommitted: (m) => committed.push(m),
        onError: (m) => errors.push(`${m.code}: ${m.msg}`),
        onClose: () => reject(new Error("connection closed before open")),
      },
      (url) => new WebSocket(url) as never,
    );
    conn.connect();
  });
}

let server: ChildProcess | null = null;
let scenePath = "";

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "zoomsplat-e2e-"));
  scenePath = join(dir, "fixture.wzsc");
  await execFileAsync("python3", ["-c", BUILD_SCENE, scenePath],
                      { cwd: PKG_ROOT, timeout: 240_000 });

  server = spawn("python3", [
    "-m", "zoomsplat.cli", "serve", "--scene", scenePath,
    "--port", String(PORT), "--provider", "procedural",
    "--steps", "10", "--aux", "1",
  ], { cwd: PKG_ROOT, stdio: "ignore" });

  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      const res = await fetch(`http://127.0.0.1:${PORT}/healthz`);
      if (res.ok) break;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error("server did not come up");
    await new Promise((r) => setTimeout(r, 250));
  }
}, 300_000);

afterAll(() => {
  server?.kill();
});

describe("scripted interactive session", () => {
  it("orbits, zooms, commits, and stays ordered and interactive", async () => {
    const session = await startSession();
    const { conn } = session;

    conn.requestLayers();
    await session.waitManifest(1);
    const manifest = session.manifests[0];
    expect(manifest.layers).toHaveLength(3);

    // interactive view: the finest layer's creation camera on a 256 canvas
    const deepest = manifest.layers[manifest.layers.length - 1];
    let camera: CameraState = fromLayerCamera(deepest.camera, 256, 256, 4.0);

    // orbit: a short drag arc, one camera message per step
    for (let i = 0; i < 5; i++) {
      camera = orbit(camera, 0.01, -0.005);
      conn.sendCamera(toCameraMessage(camera));
      await session.waitFrame(session.frames.length + 1);
    }

    // sustained interactive rate at 256x256
    const n = 15;
    const base = session.frames.length;
    const start = Date.now();
    for (let i = 0; i < n; i++) {
      camera = orbit(camera, 0.004, 0.0);
      conn.sendCamera(toCameraMessage(camera));
      await session.waitFrame(base + i + 1);
    }
    const fps = (n / (Date.now() - start)) * 1000;
    expect(fps).toBeGreaterThanOrEqual(10);

    // frame ids stay strictly monotone across the whole session
    const ids = session.frames.map((f) => f.frameId);
    for (let i = 1; i < ids.length; i++) {
      expect(ids[i]).toBeGreaterThan(ids[i - 1]);
    }

    // zoom rectangle + prompt -> committed
    const zoom = buildZoomMessage(
      manifest, camera,
      { x: 96, y: 96, width: 64, height: 64 },
      "tiny crystals", 42);
    expect(conn.sendZoom(zoom)).toBe(true);
    await session.waitCommitted(240_000);
    expect(session.committed[0].layer).toBe(3);
    expect(session.errors).toEqual([]);

    // the committed layer appears in a fresh manifest
    conn.requestLayers();
    await session.waitManifest(2);
    const after = session.manifests[1];
    expect(after.layers).toHaveLength(4);
    expect(after.version).toBeGreaterThanOrEqual(session.committed[0].version);

    conn.close();
  }, 420_000);
});
