"""Observation-scale computation and scale-aware opacity modulation.

A surfel's *native scale* is its creation-camera depth divided by the
geometric mean of the creation focal lengths. Rendering at another camera
yields a *render scale* by the same formula, and the surfel's opacity is
modulated by a weight that is 1 at the native scale and interpolates
linearly in log-scale toward 0 at the parent and child scale bounds.

Co-located surfels from adjacent layers whose bounds mirror each other's
native scales have weights that sum to exactly 1 throughout the transition
interval, which is what makes zooming free of popping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Camera, camera_depths

# Bounds closer than this to the native scale are treated as a step
# (the log-linear interpolation is undefined at zero width).
DEGENERATE_GAP = 1e-12


@dataclass(frozen=True)
class ScaleBounds:
    """Native scale plus optional parent/child fade endpoints.

    Absent bounds are NaN. Where present the ordering
    ``s_child < s_native < s_parent`` must hold.
    """

    s_native: float
    s_parent: float = math.nan
    s_child: float = math.nan

    def __post_init__(self):
        if not (self.s_native > 0):
            raise ValueError(f"s_native must be positive, got {self.s_native}")
        if self.has_parent and not (self.s_parent > self.s_native):
            raise ValueError("s_parent must exceed s_native")
        if self.has_child and not (self.s_child < self.s_native):
            raise ValueError("s_child must be below s_native")
        if self.has_child and not (self.s_child > 0):
            raise ValueError("s_child must be positive")

    @property
    def has_parent(self) -> bool:
        return not math.isnan(self.s_parent)

    @property
    def has_child(self) -> bool:
        return not math.isnan(self.s_child)


def native_scale(depth: float, fx: float, fy: float) -> float:
    """Observation scale of a point: depth over geometric-mean focal."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    if fx <= 0 or fy <= 0:
        raise ValueError("focal lengths must be positive")
    return depth / math.sqrt(fx * fy)


def render_scale(position: np.ndarray, camera: Camera) -> float | None:
    """Scale at which a world point is currently observed.

    Returns None when the point lies behind the camera (the surfel is
    culled, it has no observation scale).
    """
    depth = float(camera_depths(np.asarray(position, dtype=np.float64)[None, :], camera)[0])
    if depth <= 1e-9:
        return None
    return depth / camera.focal_mean


def render_scales(positions: np.ndarray, camera: Camera):
    """Batch render scales: returns (scales (N,), depths (N,), valid (N,))."""
    depths = camera_depths(positions, camera)
    valid = depths > 1e-9
    scales = np.where(valid, depths, 1.0) / camera.focal_mean
    return scales, depths, valid


def opacity_weight(s_render: float, bounds: ScaleBounds) -> float:
    """Modulation weight for one surfel observed at ``s_render``.

    The five-case schedule, interpolating in natural-log space:

    - 1 when there is no parent and the view is at or coarser than native;
    - fade from 0 at the parent bound to 1 at native (coarser side);
    - fade from 1 at native to 0 at the child bound (finer side);
    - 1 when there is no child and the view is at or finer than native;
    - 0 otherwise.

    Continuous in log(s_render) across every case boundary.
    """
    if not (s_render > 0):
        raise ValueError(f"s_render must be positive, got {s_render}")
    n, p, c = bounds.s_native, bounds.s_parent, bounds.s_child
    if not bounds.has_parent and s_render >= n:
        return 1.0
    if bounds.has_parent and p >= s_render >= n:
        if p - n < DEGENERATE_GAP:
            return 1.0 if s_render <= n else 0.0
        return (math.log(p) - math.log(s_render)) / (math.log(p) - math.log(n))
    if bounds.has_child and n >= s_render >= c:
        if n - c < DEGENERATE_GAP:
            return 1.0 if s_render >= n else 0.0
        return (math.log(s_render) - math.log(c)) / (math.log(n) - math.log(c))
    if not bounds.has_child and s_render <= n:
        return 1.0
    return 0.0


def opacity_weights(s_render: np.ndarray, native: np.ndarray,
                    parent: np.ndarray, child: np.ndarray) -> np.ndarray:
    """Vectorized :func:`opacity_weight` over per-surfel arrays.

    ``parent`` and ``child`` use NaN for absent bounds. Mirrors the scalar
    branch structure exactly, including degenerate-gap steps.
    """
    s = np.asarray(s_render, dtype=np.float64)
    native = np.asarray(native, dtype=np.float64)
    has_p = ~np.isnan(parent)
    has_c = ~np.isnan(child)
    pf = np.where(has_p, parent, np.inf)
    cf = np.where(has_c, child, -np.inf)
    out = np.zeros(s.shape, dtype=np.float64)

    coarser = s >= native  # at or coarser than native
    finer = s <= native

    # no parent, viewed at or above native
    out[~has_p & coarser] = 1.0

    # parent-side interpolation; degenerate gap becomes a step at native.
    # The only overlap with the child side is s == native, where both give 1.
    m2 = has_p & coarser & (s <= pf)
    if np.any(m2):
        deg = (pf - native) < DEGENERATE_GAP
        reg = m2 & ~deg
        out[reg] = (np.log(pf[reg]) - np.log(s[reg])) / (
            np.log(pf[reg]) - np.log(native[reg]))
        step = m2 & deg
        out[step] = np.where(s[step] <= native[step], 1.0, 0.0)

    # child-side interpolation
    m3 = has_c & finer & (s >= cf)
    if np.any(m3):
        deg = (native - cf) < DEGENERATE_GAP
        reg = m3 & ~deg
        out[reg] = (np.log(s[reg]) - np.log(cf[reg])) / (
            np.log(native[reg]) - np.log(cf[reg]))
        step = m3 & deg
        out[step] = np.where(s[step] >= native[step], 1.0, 0.0)

    # no child, viewed at or below native
    out[~has_c & finer] = 1.0
    return out
