"""Progressive detail synthesis: zoom cameras, detail providers, aux views,
and the staged pipeline that grows the scene by one finer layer.

The pluggable DetailProvider boundary stands in for external super-
resolution / editing / video models. The bundled procedural provider is
deterministic, which makes the whole zoom loop reproducible end to end; the
subprocess provider hands the same contract to an external command.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .depthreg import RegistrationResult, SegmentSet, register_depth
from .diffopt import OptimConfig, fit_layer
from .geometry import Camera, DepthMap, camera_depths, rot_to_quat
from .images import load_image, save_image
from .rasterizer import Frame, RenderConfig, render_with_stats
from .scene import MultiScaleScene, SceneError, SceneSnapshot, ScaleLayer, snapshot_of
from .surfelize import pixel_aligned_surfels

DEFAULT_ZOOM_FACTOR = 8.0
AUX_ORBIT_DEG = 5.0  # per-axis rotation budget for neighboring views
AUX_RADIUS_FRAC = 0.02  # camera displacement relative to median layer depth
NOISE_PERIODS = (8.0, 4.0, 2.0, 1.0)  # px, strictly above the coarse band
NOISE_AMPLITUDE = 0.07
DEPTH_NOISE_FRAC = 0.005


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetailRequest:
    """One zoom-in: where to look, how far, and what to imagine there."""

    parent_layer: int
    zoom_center: tuple  # (u, v) pixel in the parent creation view
    zoom_factor: float = DEFAULT_ZOOM_FACTOR
    prompt: str = ""
    seed: int = 0

    def __post_init__(self):
        if not (self.zoom_factor > 1):
            raise ValueError(f"zoom factor must exceed 1, got {self.zoom_factor}")


def zoom_camera(parent_camera: Camera, request: DetailRequest) -> Camera:
    """Camera for the new scale: same pose, focal scaled by the zoom factor,
    principal point shifted so the zoom center lands at the image center.

    Raises ValueError when the zoomed view would leave the parent's field of
    view or the zoom center lies outside the parent image.
    """
    u0, v0 = float(request.zoom_center[0]), float(request.zoom_center[1])
    w, h = parent_camera.width, parent_camera.height
    if not (0 <= u0 < w and 0 <= v0 < h):
        raise ValueError(f"zoom center {(u0, v0)} outside the parent image")
    k = request.zoom_factor
    # child pixel u maps to the parent pixel u0 + (u - w/2) / k
    for cu, cv in ((0, 0), (w, 0), (0, h), (w, h)):
        pu = u0 + (cu - w / 2.0) / k
        pv = v0 + (cv - h / 2.0) / k
        if not (0 <= pu <= w and 0 <= pv <= h):
            raise ValueError("zoom region extends outside the parent field of view")
    fx = parent_camera.fx * k
    fy = parent_camera.fy * k
    cx = w / 2.0 - k * (u0 - parent_camera.cx)
    cy = h / 2.0 - k * (v0 - parent_camera.cy)
    return Camera(pose=parent_camera.pose, fx=fx, fy=fy, width=w, height=h,
                  cx=cx, cy=cy)


# ---------------------------------------------------------------------------
# Detail providers


class DetailProvider:
    """Produces a fine-scale image (and optionally depth / aux fills) from a
    coarse render crop and a prompt."""

    supplies_depth: bool = False
    supplies_aux_views: bool = False

    def generate(self, coarse: Frame, context: str, prompt: str, seed: int):
        """Return (image (H, W, 3) in [0, 1], depth hint DepthMap or None)."""
        raise NotImplementedError

    def fill(self, conditioning: Frame, mask: np.ndarray, context: str,
             prompt: str, seed: int) -> np.ndarray:
        """Fill masked regions of an auxiliary view's conditioning render."""
        raise NotImplementedError


class StubProvider(DetailProvider):
    """Pass-through provider: the fine image is the coarse render itself."""

    def generate(self, coarse: Frame, context: str, prompt: str, seed: int):
        return coarse.color.copy(), None


def _mix_seed(seed: int, prompt: str, salt: str = "") -> np.random.Generator:
    digest = hashlib.blake2b(f"{prompt}\x00{salt}".encode(), digest_size=8).digest()
    return np.random.default_rng([seed & 0xFFFFFFFF, int.from_bytes(digest, "little")])


def _value_noise(shape, period: float, rng: np.random.Generator) -> np.ndarray:
    """Bilinear value noise in [-1, 1] with the given lattice period."""
    h, w = shape
    lh = int(np.ceil(h / period)) + 2
    lw = int(np.ceil(w / period)) + 2
    lattice = rng.uniform(-1.0, 1.0, size=(lh, lw))
    ys = (np.arange(h) + 0.5) / period
    xs = (np.arange(w) + 0.5) / period
    coords = np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=0)
    return ndimage.map_coordinates(lattice, coords.reshape(2, -1), order=1,
                                   mode="nearest").reshape(h, w)


def _octave_noise(shape, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    out = np.zeros(shape)
    amp = amplitude
    for period in NOISE_PERIODS:
        out += amp * _value_noise(shape, period, rng)
        amp *= 0.5
    return out


def _fill_invalid(depth: DepthMap) -> np.ndarray:
    """Nearest-valid fill of invalid depth pixels."""
    if np.all(depth.validity):
        return depth.values.copy()
    idx = ndimage.distance_transform_edt(~depth.validity, return_distances=False,
                                         return_indices=True)
    return depth.values[tuple(idx)]


def _hint_support(depth: DepthMap) -> DepthMap | None:
    """Relaxed view of a rendered depth map for deriving provider hints.

    Registration targets require solid coverage, but a hint can lean on any
    pixel that composited real geometry (positive expected depth).
    """
    support = depth.validity | (depth.values > 0)
    if not np.any(support):
        return None
    return DepthMap(np.where(support, depth.values, 0.0), validity=support)


class ProceduralProvider(DetailProvider):
    """Deterministic stand-in for the learned synthesis stack.

    Injects band-limited multi-octave value noise above the coarse image's
    Nyquist band, so downsampling the fine image by the zoom factor recovers
    the coarse crop. The prompt is hashed into the seed, so different prompts
    yield different detail.
    """

    supplies_depth = True
    supplies_aux_views = True

    def generate(self, coarse: Frame, context: str, prompt: str, seed: int):
        h, w, _ = coarse.color.shape
        rng = _mix_seed(seed, prompt, "detail")
        shared = _octave_noise((h, w), rng, NOISE_AMPLITUDE)
        image = coarse.color.copy()
        for ch in range(3):
            tint = _octave_noise((h, w), rng, NOISE_AMPLITUDE * 0.25)
            image[:, :, ch] = np.clip(image[:, :, ch] + shared + tint, 0.0, 1.0)

        support = _hint_support(coarse.depth)
        if support is None:
            return image, None
        base = _fill_invalid(support)
        relief = _value_noise((h, w), NOISE_PERIODS[0], rng)
        values = base * (1.0 + DEPTH_NOISE_FRAC * relief)
        depth = DepthMap(values, validity=values > 0)
        return image, depth

    def fill(self, conditioning: Frame, mask: np.ndarray, context: str,
             prompt: str, seed: int) -> np.ndarray:
        h, w, _ = conditioning.color.shape
        out = conditioning.color.copy()
        if not np.any(mask):
            return out
        known = ~mask
        if not np.any(known):
            rng = _mix_seed(seed, prompt, "fill")
            return np.clip(0.5 + _octave_noise((h, w), rng, NOISE_AMPLITUDE)[..., None],
                           0.0, 1.0) * np.ones((h, w, 3))
        idx = ndimage.distance_transform_edt(mask, return_distances=False,
                                             return_indices=True)
        nearest = out[tuple(idx)]
        rng = _mix_seed(seed, prompt, "fill")
        noise = _octave_noise((h, w), rng, NOISE_AMPLITUDE * 0.5)
        filled = np.clip(nearest + noise[..., None], 0.0, 1.0)
        out[mask] = filled[mask]
        return out


class SubprocessProvider(DetailProvider):
    """Bridge to an external command via a work-directory file contract.

    For each request the engine writes ``request.json`` plus ``coarse.png``
    (and ``coarse_depth.bin``) into a fresh directory and invokes the
    command with that directory as its last argument. The command must write
    ``fine.png`` and may write ``fine_depth.bin``; fill requests use
    ``conditioning.png`` + ``mask.png`` in, ``fill.png`` out.
    """

    supplies_depth = True
    supplies_aux_views = True

    def __init__(self, command: str):
        self.command = command

    def _invoke(self, payload: dict, writes: dict, expect: str) -> Path:
        workdir = Path(tempfile.mkdtemp(prefix="zoomsplat-provider-"))
        (workdir / "request.json").write_text(json.dumps(payload))
        for name, writer in writes.items():
            writer(workdir / name)
        argv = shlex.split(self.command) + [str(workdir)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise SynthesisError(
                f"provider command failed ({proc.returncode}): {proc.stderr.strip()}")
        out = workdir / expect
        if not out.exists():
            raise SynthesisError(f"provider did not produce {expect}")
        return workdir

    def generate(self, coarse: Frame, context: str, prompt: str, seed: int):
        h, w, _ = coarse.color.shape
        payload = {"mode": "generate", "prompt": prompt, "context": context,
                   "seed": seed, "width": w, "height": h}
        workdir = self._invoke(
            payload,
            {"coarse.png": lambda p: save_image(coarse.color, p),
             "coarse_depth.bin": lambda p: coarse.depth.save_bin(p)},
            "fine.png")
        image = load_image(workdir / "fine.png")
        if image.shape[:2] != (h, w):
            raise SynthesisError("provider image has the wrong resolution")
        depth_path = workdir / "fine_depth.bin"
        depth = DepthMap.load_bin(depth_path) if depth_path.exists() else None
        return image, depth

    def fill(self, conditioning: Frame, mask: np.ndarray, context: str,
             prompt: str, seed: int) -> np.ndarray:
        from PIL import Image

        h, w, _ = conditioning.color.shape
        payload = {"mode": "fill", "prompt": prompt, "context": context,
                   "seed": seed, "width": w, "height": h}
        workdir = self._invoke(
            payload,
            {"conditioning.png": lambda p: save_image(conditioning.color, p),
             "mask.png": lambda p: Image.fromarray(
                 (np.asarray(mask, dtype=np.uint8) * 255)).save(p)},
            "fill.png")
        return load_image(workdir / "fill.png")


def make_provider(spec: str) -> DetailProvider:
    """Parse a provider spec: 'procedural', 'stub', or 'cmd:<command>'."""
    if spec == "procedural":
        return ProceduralProvider()
    if spec == "stub":
        return StubProvider()
    if spec.startswith("cmd:"):
        return SubprocessProvider(spec[4:])
    raise ValueError(f"unknown provider spec {spec!r}")


# ---------------------------------------------------------------------------
# Auxiliary views


@dataclass
class AuxView:
    camera: Camera
    frame: Frame
    mask: np.ndarray  # True where the conditioning render lacked coverage


def _look_at(eye: np.ndarray, target: np.ndarray, down_hint: np.ndarray) -> np.ndarray:
    """World-to-camera pose looking from eye toward target (+z forward)."""
    f = target - eye
    f = f / np.linalg.norm(f)
    x = np.cross(down_hint, f)
    x = x / np.linalg.norm(x)
    y = np.cross(f, x)
    R = np.stack([x, y, f], axis=0)
    pose = np.eye(4)
    pose[:3, :3] = R
    pose[:3, 3] = -R @ eye
    return pose


def sample_orbit_cameras(camera: Camera, median_depth: float, k: int,
                         seed: int = 0) -> list:
    """K cameras on a small orbit around the input view.

    Each camera is displaced tangentially by 2% of the median layer depth
    and re-aimed at the original optical-axis target, which keeps the
    rotation offset well under the 5-degree budget.
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x0A0B])
    R = camera.rotation
    eye = camera.center
    forward = R[2]
    right = R[0]
    down = R[1]
    target = eye + forward * median_depth
    out = []
    for _ in range(k):
        phi = rng.uniform(0.0, 2 * np.pi)
        offset = (np.cos(phi) * right + np.sin(phi) * down) * AUX_RADIUS_FRAC * median_depth
        pose = _look_at(eye + offset, target, down)
        out.append(Camera(pose=pose, fx=camera.fx, fy=camera.fy,
                          width=camera.width, height=camera.height,
                          cx=camera.cx, cy=camera.cy))
    return out


def auxiliary_views(partial_layer: ScaleLayer, camera: Camera, k: int,
                    provider: DetailProvider = None, coarse: SceneSnapshot = None,
                    context: str = "", prompt: str = "", seed: int = 0,
                    render_cfg: RenderConfig = None) -> list:
    """Render the partial layer from K orbit cameras and fill the holes.

    Masks flag pixels the partial layer does not cover (alpha < 0.5); the
    provider fills them when it supports aux views, otherwise the procedural
    nearest-valid fill is used. Filled depth is registered against the
    coarse snapshot when available (passthrough where it has no coverage).
    """
    if k == 0:
        return []
    render_cfg = render_cfg or RenderConfig()
    depths = camera_depths(partial_layer.positions, camera)
    median_depth = float(np.median(depths))
    cameras = sample_orbit_cameras(camera, median_depth, k, seed)
    filler = provider if (provider is not None and provider.supplies_aux_views) \
        else ProceduralProvider()
    # conditioning renders use saturated opacity: the mask must flag pixels
    # the layer geometrically fails to cover, not pixels that are merely
    # translucent because the layer has not been optimized yet
    saturated = partial_layer.with_params(
        opacities=np.ones(len(partial_layer)))
    partial_snap = snapshot_of([saturated])
    out = []
    for i, cam in enumerate(cameras):
        cond, _ = render_with_stats(partial_snap, cam, render_cfg)
        mask = cond.alpha < 0.5
        color = filler.fill(cond, mask, context, prompt, seed + i)
        depth = DepthMap(_fill_invalid(cond.depth)) if np.any(cond.depth.validity) \
            else cond.depth
        if coarse is not None and np.any(depth.validity):
            depth = register_depth(depth, coarse, cam).depth
        out.append(AuxView(camera=cam, frame=Frame(color=color, depth=depth,
                                                   alpha=cond.alpha), mask=mask))
    return out


def sweep_cameras(cam_a: Camera, cam_b: Camera, frames: int) -> list:
    """Focal-interpolated zoom path from one camera to another.

    Focal lengths interpolate geometrically (constant zoom rate per frame);
    the principal point interpolates linearly. Poses must match — sweeps run
    along a zoom chain, which shares one pose.
    """
    if frames < 2:
        raise ValueError("a sweep needs at least 2 frames")
    if not np.allclose(cam_a.pose, cam_b.pose, atol=1e-12):
        raise ValueError("sweep endpoints must share a pose")
    if (cam_a.width, cam_a.height) != (cam_b.width, cam_b.height):
        raise ValueError("sweep endpoints must share an image size")
    out = []
    for i in range(frames):
        t = i / (frames - 1)
        fx = cam_a.fx * (cam_b.fx / cam_a.fx) ** t
        fy = cam_a.fy * (cam_b.fy / cam_a.fy) ** t
        cx = (1 - t) * cam_a.cx + t * cam_b.cx
        cy = (1 - t) * cam_a.cy + t * cam_b.cy
        out.append(Camera(pose=cam_a.pose, fx=fx, fy=fy, width=cam_a.width,
                          height=cam_a.height, cx=cx, cy=cy))
    return out


# ---------------------------------------------------------------------------
# The synthesis stage sequence


@dataclass(frozen=True)
class SynthConfig:
    aux_views: int = 4
    optim: OptimConfig = field(default_factory=OptimConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    context: str = ""  # semantic context text, provider territory


def synthesize_scale(scene: MultiScaleScene, request: DetailRequest,
                     provider: DetailProvider, segments: SegmentSet = None,
                     config: SynthConfig = None) -> int:
    """Grow the scene by one finer-scale layer; returns the new layer index.

    Stages: render the coarse observation at the zoom camera, let the
    provider synthesize the fine image, register depth, build pixel-aligned
    surfels with parent bounds, sample auxiliary views, fit the layer, and
    commit (parent child-bounds + append) atomically. Any failure leaves the
    scene unmodified.
    """
    config = config or SynthConfig()
    snap = scene.snapshot()
    if not (0 <= request.parent_layer < len(snap.layers)):
        raise SceneError(f"unknown parent layer {request.parent_layer}")
    parent = snap.layers[request.parent_layer]

    cam = zoom_camera(parent.creation_camera, request)
    coarse, _ = render_with_stats(snap, cam, config.render)

    fine_image, depth_hint = provider.generate(coarse, config.context,
                                               request.prompt, request.seed)
    fine_image = np.asarray(fine_image, dtype=np.float64)
    if fine_image.shape != (cam.height, cam.width, 3):
        raise SynthesisError("provider image does not match the zoom camera")

    if provider.supplies_depth and depth_hint is not None:
        raw_depth = depth_hint
    else:
        support = _hint_support(coarse.depth)
        if support is None:
            raise SynthesisError("no coarse depth coverage to seed the new layer")
        raw_depth = DepthMap(_fill_invalid(support))
    registered = register_depth(raw_depth, snap, cam, segments=segments).depth

    partial = pixel_aligned_surfels(
        fine_image, registered, cam, parent_camera=parent.creation_camera,
        parent_layer=request.parent_layer, scale_index=parent.scale_index + 1,
        prompt=request.prompt)

    aux = auxiliary_views(partial, cam, config.aux_views, provider=provider,
                          coarse=snap, context=config.context,
                          prompt=request.prompt, seed=request.seed,
                          render_cfg=config.render)

    views = [(fine_image, cam)] + [(v.frame.color, v.camera) for v in aux]
    backdrop = SceneSnapshot(layers=snap.layers, version=snap.version)
    fitted, _ = fit_layer(backdrop, partial, views, config.optim, config.render)

    return scene.commit_child_layer(request.parent_layer, cam, fitted)
