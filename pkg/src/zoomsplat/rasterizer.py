"""Forward splatting renderer over scene snapshots.

Pipeline: per-layer culling (frustum, footprint-image intersection, and
modulation weight > 0 when enabled), global front-to-back sort by center
depth with (layer, index) tie-breaks, screen-space 16x16 tile binning, and
per-pixel alpha compositing of the modulated surfels. Color, expected depth,
and accumulated alpha come out of one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Camera, DepthMap, camera_points, quat_to_rot
from .modulation import opacity_weights
from .scene import SceneSnapshot, ScaleLayer

TILE = 16
COV_REG = 0.3  # px^2 added to the projected covariance diagonal
DEFAULT_WIDTH = 1088
DEFAULT_HEIGHT = 720


@dataclass(frozen=True)
class RenderConfig:
    background: tuple = (0.0, 0.0, 0.0)
    gaussian_cutoff: float = 3.0  # footprint extent in sigma multiples
    max_alpha: float = 0.99  # per-pixel contribution clamp
    transmittance_floor: float = 1e-4  # early-out threshold; 0 disables
    modulation: bool = True

    def __post_init__(self):
        if not (self.gaussian_cutoff > 0):
            raise ValueError("gaussian cutoff must be positive")
        if not (0 < self.max_alpha <= 1):
            raise ValueError("max_alpha must lie in (0, 1]")
        if not (0 <= self.transmittance_floor < 1):
            raise ValueError("transmittance floor must lie in [0, 1)")


@dataclass
class Frame:
    """Rendered color, alpha-weighted expected depth, and coverage."""

    color: np.ndarray  # (H, W, 3) in [0, 1]
    depth: DepthMap
    alpha: np.ndarray  # (H, W) accumulated opacity

    def save_png(self, path) -> None:
        from .images import save_image
        save_image(self.color, path)

    def save_depth(self, path) -> int:
        return self.depth.save_bin(path)


@dataclass
class CullResult:
    """Surfels surviving culling, flattened across layers, unsorted."""

    layer_ids: np.ndarray  # (M,) position of the layer in the snapshot
    surfel_ids: np.ndarray  # (M,) index within the layer
    means: np.ndarray  # (M, 2) projected centers, pixels
    conics: np.ndarray  # (M, 3) inverse 2-D covariance (A, B, C)
    radii: np.ndarray  # (M,) footprint extent, pixels
    depths: np.ndarray  # (M,) camera-frame z
    colors: np.ndarray  # (M, 3)
    opacities_mod: np.ndarray  # (M,) stored opacity times modulation weight

    def __len__(self) -> int:
        return len(self.depths)


@dataclass
class RenderStats:
    """Workload counters for the cost ablation."""

    composited_surfels: int  # surfels entering compositing after culling
    composited_pairs: int  # surfel-pixel contributions actually blended


def _layer_footprints(layer: ScaleLayer, camera: Camera, cutoff: float):
    """Project one layer's surfels: means, conics, radii, depths, validity."""
    pc = camera_points(layer.positions, camera)  # (N, 3)
    z = pc[:, 2]
    in_front = z > 1e-9
    zs = np.where(in_front, z, 1.0)
    u = camera.fx * pc[:, 0] / zs + camera.cx
    v = camera.fy * pc[:, 1] / zs + camera.cy
    means = np.stack([u, v], axis=-1)

    # camera-frame covariance: (W R S)(W R S)^T with S = diag(sx, sy, eps)
    rot = quat_to_rot(layer.quats)  # (N, 3, 3)
    svec = np.concatenate([layer.scales, layer.thickness()[:, None]], axis=1)  # (N, 3)
    wr = np.einsum("ij,njk->nik", camera.rotation, rot)
    a3 = wr * svec[:, None, :]

    # perspective Jacobian at the center
    n = len(layer)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / zs
    J[:, 0, 2] = -camera.fx * pc[:, 0] / zs**2
    J[:, 1, 1] = camera.fy / zs
    J[:, 1, 2] = -camera.fy * pc[:, 1] / zs**2

    ja = np.einsum("nij,njk->nik", J, a3)  # (N, 2, 3)
    cov = np.einsum("nij,nkj->nik", ja, ja)  # (N, 2, 2)
    cov[:, 0, 0] += COV_REG
    cov[:, 1, 1] += COV_REG

    a = cov[:, 0, 0]; b = cov[:, 0, 1]; c = cov[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=-1)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radii = cutoff * np.sqrt(lam_max)
    return means, conics, radii, z, in_front


def splat_footprint(surfel, camera: Camera, cutoff: float = 3.0):
    """Screen-space footprint of one surfel: (mean (2,), cov2d (2, 2), radius).

    Raises ValueError for surfels behind the camera.
    """
    from .scene import ScaleLayer as _Layer

    layer = _Layer(
        creation_camera=camera, positions=[surfel.position], quats=[surfel.quat],
        scales=[surfel.scales], opacities=[surfel.opacity], colors=[surfel.color],
        native_scales=[surfel.native_scale])
    means, conics, radii, z, in_front = _layer_footprints(layer, camera, cutoff)
    if not in_front[0]:
        raise ValueError("surfel lies behind the camera")
    A, B, C = conics[0]
    det = A * C - B * B
    cov = np.array([[C / det, -B / det], [-B / det, A / det]])
    return means[0], cov, float(radii[0])


def cull(snapshot: SceneSnapshot, camera: Camera, config: RenderConfig = None) -> CullResult:
    """Surfels in front of the camera whose footprint meets the image and,
    with modulation enabled, whose opacity weight is positive."""
    config = config or RenderConfig()
    parts = []
    for lid, layer in enumerate(snapshot.layers):
        if len(layer) == 0:
            continue
        means, conics, radii, z, in_front = _layer_footprints(
            layer, camera, config.gaussian_cutoff)
        keep = in_front.copy()
        keep &= (means[:, 0] + radii > 0) & (means[:, 0] - radii < camera.width)
        keep &= (means[:, 1] + radii > 0) & (means[:, 1] - radii < camera.height)
        if config.modulation:
            s_render = np.where(in_front, z, 1.0) / camera.focal_mean
            weights = opacity_weights(s_render, layer.native_scales,
                                      layer.parent_scales, layer.child_scales)
            keep &= weights > 0
            omod = layer.opacities * weights
        else:
            omod = layer.opacities
        idx = np.nonzero(keep)[0]
        if len(idx) == 0:
            continue
        parts.append((
            np.full(len(idx), lid, dtype=np.int64), idx.astype(np.int64),
            means[idx], conics[idx], radii[idx], z[idx],
            layer.colors[idx], omod[idx]))
    if not parts:
        empty = lambda *shape: np.zeros(shape)
        return CullResult(
            layer_ids=np.zeros(0, dtype=np.int64), surfel_ids=np.zeros(0, dtype=np.int64),
            means=empty(0, 2), conics=empty(0, 3), radii=empty(0),
            depths=empty(0), colors=empty(0, 3), opacities_mod=empty(0))
    cols = [np.concatenate([p[k] for p in parts]) for k in range(8)]
    return CullResult(*cols)


def _sorted_plan(culled: CullResult):
    """Front-to-back order with deterministic (layer, index) tie-breaks."""
    order = np.lexsort((culled.surfel_ids, culled.layer_ids, culled.depths))
    return CullResult(
        layer_ids=culled.layer_ids[order], surfel_ids=culled.surfel_ids[order],
        means=np.ascontiguousarray(culled.means[order]),
        conics=np.ascontiguousarray(culled.conics[order]),
        radii=np.ascontiguousarray(culled.radii[order]),
        depths=np.ascontiguousarray(culled.depths[order]),
        colors=np.ascontiguousarray(culled.colors[order]),
        opacities_mod=np.ascontiguousarray(culled.opacities_mod[order]))


def _tile_lists(plan: CullResult, width: int, height: int):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    hist = _kernels.tile_histogram(plan.means, plan.radii, TILE, tiles_x, tiles_y)
    offsets = np.zeros(len(hist) + 1, dtype=np.int64)
    np.cumsum(hist, out=offsets[1:])
    lists = np.zeros(offsets[-1], dtype=np.int64)
    if len(plan) > 0:
        _kernels.fill_tile_lists(plan.means, plan.radii, TILE, tiles_x, tiles_y,
                                 offsets, lists)
    return offsets, lists


def _pack_rows(plan: CullResult, exp_cutoff: float) -> np.ndarray:
    """One row per surfel: [mu, mv, A, B, C, r, g, b, omod, z, rx2, ry2].

    rx2/ry2 are the squared axis-aligned half-extents of the e <= cutoff
    ellipse (2 * cutoff * cov_xx and ..yy), a cheap per-pixel pre-test that
    rejects most of the bounding-box over-admission.
    """
    rows = np.empty((len(plan), 12))
    rows[:, 0:2] = plan.means
    rows[:, 2:5] = plan.conics
    rows[:, 5:8] = plan.colors
    rows[:, 8] = plan.opacities_mod
    rows[:, 9] = plan.depths
    a, b, c = plan.conics[:, 0], plan.conics[:, 1], plan.conics[:, 2]
    det = a * c - b * b
    rows[:, 10] = 2.0 * exp_cutoff * c / det  # cov_xx
    rows[:, 11] = 2.0 * exp_cutoff * a / det  # cov_yy
    return rows


def render_with_stats(snapshot: SceneSnapshot, camera: Camera,
                      config: RenderConfig = None):
    """Full render returning (Frame, RenderStats)."""
    config = config or RenderConfig()
    plan = _sorted_plan(cull(snapshot, camera, config))
    offsets, lists = _tile_lists(plan, camera.width, camera.height)

    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3))
    depth_sum = np.zeros((h, w))
    alpha = np.zeros((h, w))
    tiles = len(offsets) - 1
    tile_counts = np.zeros(tiles, dtype=np.int64)
    bg = np.asarray(config.background, dtype=np.float64)
    exp_cutoff = 0.5 * config.gaussian_cutoff**2
    _kernels.composite_forward(
        _pack_rows(plan, exp_cutoff), offsets, lists, w, h, TILE, bg, config.max_alpha,
        config.transmittance_floor, exp_cutoff,
        color, depth_sum, alpha, tile_counts)

    # validity follows the sparse-target contract (alpha > 0.5); expected
    # depth values are kept wherever there is any real coverage so providers
    # can still derive hints from translucent content
    covered = alpha > 0.5
    values = np.where(alpha > 1e-3, depth_sum / np.maximum(alpha, 1e-300), 0.0)
    frame = Frame(color=color, depth=DepthMap(values, validity=covered), alpha=alpha)
    stats = RenderStats(composited_surfels=len(plan),
                        composited_pairs=int(tile_counts.sum()))
    return frame, stats


def render_color(snapshot: SceneSnapshot, camera: Camera,
                 config: RenderConfig = None) -> Frame:
    frame, _ = render_with_stats(snapshot, camera, config)
    return frame


def render_depth(snapshot: SceneSnapshot, camera: Camera) -> DepthMap:
    """Sparse target depth: valid only where accumulated alpha exceeds 0.5."""
    return render_color(snapshot, camera, RenderConfig()).depth
