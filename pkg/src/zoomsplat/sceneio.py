"""Bit-exact scene persistence.

Layout (all little-endian, no padding): magic "WZSC", version u32, layer
count u32; per layer a header (scale_index u32, parent_layer i32 with -1 for
none, prompt as u32-length-prefixed UTF-8, camera pose 16 x f64 row-major
world-to-camera, fx/fy/cx/cy f64, width u32, height u32, surfel count u64)
followed by packed surfels: p 3xf32, q 4xf32 (w,x,y,z), s 2xf32, o f32,
c 3xf32, native f32, parent f32, child f32 — NaN encodes an absent bound.
Camera poses stay f64 because deep zoom chains span large scale ratios;
surfels are f32, which keeps records fixed-width and mmap-friendly.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .geometry import Camera
from .scene import MultiScaleScene, SceneError, SceneSnapshot, ScaleLayer

MAGIC = b"WZSC"
VERSION = 1
SURFEL_DTYPE = np.dtype([
    ("p", "<f4", 3), ("q", "<f4", 4), ("s", "<f4", 2), ("o", "<f4"),
    ("c", "<f4", 3), ("native", "<f4"), ("parent", "<f4"), ("child", "<f4"),
])
assert SURFEL_DTYPE.itemsize == 64


class SceneIOError(Exception):
    """Base for persistence failures."""


class BadMagicError(SceneIOError):
    pass


class UnsupportedVersionError(SceneIOError):
    pass


class TruncatedSceneError(SceneIOError):
    pass


class SceneInvariantError(SceneIOError):
    """The file decoded but describes an invalid scene."""


def _pack_layer(layer: ScaleLayer) -> bytes:
    buf = io.BytesIO()
    prompt = layer.prompt.encode("utf-8")
    parent = -1 if layer.parent_layer is None else layer.parent_layer
    buf.write(struct.pack("<Ii", layer.scale_index, parent))
    buf.write(struct.pack("<I", len(prompt)))
    buf.write(prompt)
    cam = layer.creation_camera
    buf.write(np.ascontiguousarray(cam.pose, dtype="<f8").tobytes())
    buf.write(struct.pack("<dddd", cam.fx, cam.fy, cam.cx, cam.cy))
    buf.write(struct.pack("<IIQ", cam.width, cam.height, len(layer)))

    rec = np.zeros(len(layer), dtype=SURFEL_DTYPE)
    rec["p"] = layer.positions
    rec["q"] = layer.quats
    rec["s"] = layer.scales
    rec["o"] = layer.opacities
    rec["c"] = layer.colors
    rec["native"] = layer.native_scales
    rec["parent"] = layer.parent_scales
    rec["child"] = layer.child_scales
    buf.write(rec.tobytes())
    return buf.getvalue()


def serialize_scene(scene) -> bytes:
    snap = scene.snapshot() if isinstance(scene, MultiScaleScene) else scene
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(snap.layers)))
    for layer in snap.layers:
        buf.write(_pack_layer(layer))
    return buf.getvalue()


def save_scene(scene, path) -> int:
    """Write the scene (or a snapshot) to disk; returns bytes written.

    The file is written to a temporary sibling and renamed, so a failure
    never leaves a partial scene file behind.
    """
    data = serialize_scene(scene)
    path = os.fspath(path)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise SceneIOError(f"failed to write scene to {path}: {exc}") from exc
    return len(data)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path
        self.context = "header"

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedSceneError(
                f"{self.path}: truncated while reading {self.context} "
                f"(needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_scene(path) -> MultiScaleScene:
    """Reconstruct a scene, validating format and scene invariants.

    Raises BadMagicError, UnsupportedVersionError, TruncatedSceneError, or
    SceneInvariantError depending on the corruption class.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise SceneIOError(f"cannot read scene file {path}: {exc}") from exc

    r = _Reader(data, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, n_layers = r.unpack("<II")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")

    scene = MultiScaleScene()
    for li in range(n_layers):
        r.context = f"layer {li} header"
        scale_index, parent = r.unpack("<Ii")
        (prompt_len,) = r.unpack("<I")
        prompt = r.take(prompt_len).decode("utf-8")
        pose = np.frombuffer(r.take(16 * 8), dtype="<f8").reshape(4, 4).copy()
        fx, fy, cx, cy = r.unpack("<dddd")
        width, height, count = r.unpack("<IIQ")
        r.context = f"layer {li} surfels"
        rec = np.frombuffer(r.take(int(count) * SURFEL_DTYPE.itemsize),
                            dtype=SURFEL_DTYPE)
        try:
            camera = Camera(pose=pose, fx=fx, fy=fy, width=width, height=height,
                            cx=cx, cy=cy)
            layer = ScaleLayer(
                creation_camera=camera,
                positions=rec["p"].astype(np.float64),
                quats=rec["q"].astype(np.float64),
                scales=rec["s"].astype(np.float64),
                opacities=rec["o"].astype(np.float64),
                colors=rec["c"].astype(np.float64),
                native_scales=rec["native"].astype(np.float64),
                parent_scales=rec["parent"].astype(np.float64),
                child_scales=rec["child"].astype(np.float64),
                parent_layer=None if parent == -1 else int(parent),
                scale_index=int(scale_index), prompt=prompt)
            scene.add_layer(layer)
        except (SceneError, ValueError) as exc:
            raise SceneInvariantError(f"{path}: layer {li}: {exc}") from exc
    if r.pos != len(data):
        raise TruncatedSceneError(
            f"{path}: {len(data) - r.pos} trailing bytes after the last layer")
    return scene


def scene_manifest(scene) -> dict:
    """JSON-friendly summary: layers, cameras, counts, lineage."""
    snap = scene.snapshot() if isinstance(scene, MultiScaleScene) else scene
    return {
        "version": snap.version,
        "total_surfels": snap.total_surfels,
        "layers": [
            {
                "index": i,
                "scale_index": layer.scale_index,
                "parent": layer.parent_layer,
                "prompt": layer.prompt,
                "surfels": len(layer),
                "camera": layer.creation_camera.to_json(),
            }
            for i, layer in enumerate(snap.layers)
        ],
    }
