"""Pixel-aligned surfel layer creation from an (image, depth, camera) triple.

One surfel per valid depth pixel: position by back-projection of the pixel
center, orientation from the depth-derived normal, tangential scales sized
so adjacent one-sigma footprints meet at half-pixel offsets (Nyquist
coverage without excessive overlap), opacity 0.1 for stable optimization,
color from the pixel.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import (Camera, DepthMap, back_project_grid, camera_depths,
                       normals_from_depth, quats_from_z_to, view_directions)
from .scene import ScaleLayer, SceneError

INIT_OPACITY = 0.1
# surfels whose normal is near-perpendicular to the view ray fall back to
# facing the camera, avoiding degenerate edge-on splats
EDGE_ON_COS = math.cos(math.radians(85.0))
NYQUIST = 1.0 / math.sqrt(2.0)


def pixel_aligned_surfels(image: np.ndarray, depth: DepthMap, camera: Camera,
                          parent_camera: Camera | None = None,
                          parent_layer: int | None = None,
                          scale_index: int = 0, prompt: str = "") -> ScaleLayer:
    """Build a ScaleLayer with one surfel per valid depth pixel.

    Args:
        image: (H, W, 3) RGB in [0, 1], dimensions matching the camera.
        depth: validity-masked z-depth, same dimensions.
        camera: creation camera; also defines the native scales.
        parent_camera: previous layer's creation camera; when given, each
            surfel's parent scale bound is its depth in that camera over the
            parent's geometric-mean focal.

    Raises:
        SceneError: if no depth pixel is valid (an empty layer is not a layer).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = depth.shape
    if image.shape != (h, w, 3):
        raise SceneError(f"image shape {image.shape} does not match depth {(h, w)}")
    if (h, w) != (camera.height, camera.width):
        raise SceneError("depth dimensions must match the camera")
    valid = depth.validity
    if not np.any(valid):
        raise SceneError("cannot build a layer from an all-invalid depth map")

    points = back_project_grid(depth, camera)[valid]  # (N, 3)
    colors = image[valid]
    z = depth.values[valid]

    normals = normals_from_depth(depth, camera)[valid]
    views = view_directions(camera)[valid]
    edge_on = np.abs(np.sum(normals * views, axis=1)) < EDGE_ON_COS
    normals[edge_on] = -views[edge_on]
    quats = quats_from_z_to(normals)

    native = z / camera.focal_mean
    radius = native * NYQUIST
    scales = np.stack([radius, radius], axis=-1)

    parent_scales = None
    if parent_camera is not None:
        parent_depths = camera_depths(points, parent_camera)
        if np.any(parent_depths <= 0):
            raise SceneError("surfel behind the parent camera")
        parent_scales = parent_depths / parent_camera.focal_mean

    return ScaleLayer(
        creation_camera=camera, positions=points, quats=quats, scales=scales,
        opacities=np.full(len(points), INIT_OPACITY), colors=colors,
        native_scales=native, parent_scales=parent_scales,
        parent_layer=parent_layer, scale_index=scale_index, prompt=prompt)
