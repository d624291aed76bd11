"""Shared fixtures: cameras, synthetic scenes, and the 3-layer zoom fixture."""

import numpy as np
import pytest

from zoomsplat.diffopt import OptimConfig
from zoomsplat.geometry import DepthMap, identity_camera
from zoomsplat.rasterizer import RenderConfig, render_color
from zoomsplat.scene import MultiScaleScene, ScaleLayer
from zoomsplat.surfelize import pixel_aligned_surfels
from zoomsplat.synth import (DetailRequest, ProceduralProvider, SynthConfig,
                             synthesize_scale)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so test timings measure steady state."""
    scene = MultiScaleScene()
    cam = identity_camera(8, 8, fx=8.0)
    img = np.full((8, 8, 3), 0.5)
    depth = DepthMap(np.full((8, 8), 2.0))
    scene.add_layer(pixel_aligned_surfels(img, depth, cam))
    render_color(scene.snapshot(), cam)


def smooth_texture(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Low-frequency RGB texture; smooth enough for sub-pixel splats to fit."""
    ys = np.linspace(0, 1, h)[:, None]
    xs = np.linspace(0, 1, w)[None, :]
    rng = np.random.default_rng(seed)
    img = np.zeros((h, w, 3))
    for ch in range(3):
        phase = rng.uniform(0, 2 * np.pi, size=4)
        freq = rng.uniform(1.0, 3.0, size=4)
        img[:, :, ch] = (
            0.5
            + 0.15 * np.sin(2 * np.pi * freq[0] * xs + phase[0])
            + 0.15 * np.sin(2 * np.pi * freq[1] * ys + phase[1])
            + 0.1 * np.sin(2 * np.pi * freq[2] * (xs + ys) + phase[2])
            + 0.1 * np.cos(2 * np.pi * freq[3] * (xs - ys) + phase[3]))
    return np.clip(img, 0.05, 0.95)


def random_layer(n: int, camera, seed: int = 0, scale_range=(0.02, 0.08),
                 depth_range=(2.0, 6.0), with_bounds: bool = False) -> ScaleLayer:
    """Random surfels spread over the camera's view frustum."""
    rng = np.random.default_rng(seed)
    f = camera.focal_mean
    z = rng.uniform(*depth_range, size=n)
    u = rng.uniform(0.1 * camera.width, 0.9 * camera.width, size=n)
    v = rng.uniform(0.1 * camera.height, 0.9 * camera.height, size=n)
    x = (u - camera.cx) / camera.fx * z
    y = (v - camera.cy) / camera.fy * z
    pc = np.stack([x, y, z], axis=-1)
    R = camera.rotation
    positions = (pc - camera.translation) @ R

    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = rng.uniform(*scale_range, size=(n, 2))
    opacities = rng.uniform(0.2, 0.9, size=n)
    colors = rng.uniform(0.05, 0.95, size=(n, 3))
    native = z / f
    parent = np.full(n, np.nan)
    child = np.full(n, np.nan)
    if with_bounds:
        has_p = rng.random(n) < 0.5
        has_c = rng.random(n) < 0.5
        parent[has_p] = native[has_p] * rng.uniform(4.0, 12.0, size=int(has_p.sum()))
        child[has_c] = native[has_c] / rng.uniform(4.0, 12.0, size=int(has_c.sum()))
    return ScaleLayer(
        creation_camera=camera, positions=positions, quats=quats, scales=scales,
        opacities=opacities, colors=colors, native_scales=native,
        parent_scales=parent, child_scales=child)


def random_scene(n: int, camera, seed: int = 0, **kwargs) -> MultiScaleScene:
    scene = MultiScaleScene()
    scene.add_layer(random_layer(n, camera, seed=seed, **kwargs))
    return scene


def fixture_texture(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Mid-frequency texture with moderate contrast: busy enough that the
    fit cannot trade sharpness for splat growth, balanced across scales."""
    ys = np.linspace(0, 1, h)[:, None]
    xs = np.linspace(0, 1, w)[None, :]
    rng = np.random.default_rng(seed)
    img = np.zeros((h, w, 3))
    for ch in range(3):
        phase = rng.uniform(0, 2 * np.pi, size=4)
        img[:, :, ch] = (
            0.5
            + 0.06 * np.sin(2 * np.pi * 2.0 * xs + phase[0])
            + 0.06 * np.sin(2 * np.pi * 1.5 * ys + phase[1])
            + 0.05 * np.sin(2 * np.pi * 9.0 * (xs + 0.3 * ys) + phase[2])
            + 0.05 * np.cos(2 * np.pi * 7.0 * (ys - 0.4 * xs) + phase[3]))
    return np.clip(img, 0.05, 0.95)


def build_zoom_fixture(size: int = 128, zooms: int = 2, steps: int = 150,
                       aux_views: int = 2, seed: int = 7):
    """Root layer plus `zooms` nested procedural scales, optimization on.

    Returns (scene, provider). Zoom centers sit at each layer's image center
    so the chain shares one pose with focal growing by 8x per level.
    """
    cam = identity_camera(size, size, fx=float(size))
    image = fixture_texture(size, size, seed=seed)
    # gentle depth relief keeps registration fits well-conditioned
    ys = np.linspace(-1, 1, size)[:, None]
    xs = np.linspace(-1, 1, size)[None, :]
    depth = DepthMap(4.0 + 0.4 * np.sin(1.7 * xs + 0.3) + 0.4 * np.cos(1.3 * ys))
    scene = MultiScaleScene()
    scene.add_layer(pixel_aligned_surfels(image, depth, cam))
    provider = ProceduralProvider()
    render_cfg = RenderConfig()
    if steps > 0:
        from zoomsplat.diffopt import optimize_layer

        optimize_layer(scene, 0, [(image, cam)], OptimConfig(steps=steps),
                       render_cfg)
    config = SynthConfig(aux_views=aux_views, optim=OptimConfig(steps=steps),
                         render=render_cfg)
    for level in range(zooms):
        request = DetailRequest(parent_layer=level,
                                zoom_center=(size / 2.0, size / 2.0),
                                zoom_factor=8.0, prompt=f"level {level + 1}",
                                seed=seed + level)
        synthesize_scale(scene, request, provider, config=config)
    return scene, provider


@pytest.fixture(scope="session")
def zoom_fixture_scene():
    """The shared 3-layer procedural fixture (root + two nested zooms)."""
    scene, _ = build_zoom_fixture(size=128, zooms=2, steps=150, aux_views=2)
    return scene
