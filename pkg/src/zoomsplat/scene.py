"""Multi-scale scene container: surfels, scale layers, lineage, snapshots.

The scene is append-only. Layers are committed atomically and their surfel
arrays are frozen; the single permitted mutation of committed geometry is
the one-time assignment of an absent child scale bound, and even that is
performed copy-on-write so that existing snapshots never observe it.

Concurrency contract: one writer (synthesis), many readers (rendering).
Readers call :meth:`MultiScaleScene.snapshot` and render from the returned
immutable view; writers commit under the scene lock with a single reference
swap, so no reader ever sees a partially appended layer.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, project_points

QUAT_TOL = 1e-6
SCALE_FLOOR = 1e-6
# Surfel thickness along the local normal, relative to the smaller
# tangential scale; keeps covariances well-conditioned across 8x zooms.
THICKNESS_FRAC = 0.01


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Surfel:
    """Single-surfel view; storage is struct-of-arrays on the layer."""

    position: np.ndarray  # (3,)
    quat: np.ndarray  # (4,) unit, (w, x, y, z)
    scales: np.ndarray  # (2,) tangential extents, world units
    opacity: float
    color: np.ndarray  # (3,) RGB in [0, 1]
    native_scale: float
    parent_scale: float  # NaN = absent
    child_scale: float  # NaN = absent
    layer: int

    @property
    def has_parent_scale(self) -> bool:
        return not math.isnan(self.parent_scale)

    @property
    def has_child_scale(self) -> bool:
        return not math.isnan(self.child_scale)


def _frozen(arr: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.flags.writeable = False
    return out


class ScaleLayer:
    """All surfels created from one synthesized image at one camera.

    Array fields (all length N, frozen after construction):
        positions (N, 3), quats (N, 4), scales (N, 2), opacities (N,),
        colors (N, 3), native_scales (N,), parent_scales (N,) NaN-absent,
        child_scales (N,) NaN-absent.
    """

    def __init__(self, creation_camera: Camera, positions, quats, scales,
                 opacities, colors, native_scales, parent_scales=None,
                 child_scales=None, parent_layer: int | None = None,
                 scale_index: int = 0, prompt: str = ""):
        n = len(positions)
        self.creation_camera = creation_camera
        self.parent_layer = parent_layer
        self.scale_index = int(scale_index)
        self.prompt = prompt
        self.index: int | None = None  # assigned when committed to a scene

        self.positions = _frozen(np.reshape(positions, (n, 3)))
        self.quats = _frozen(np.reshape(quats, (n, 4)))
        self.scales = _frozen(np.reshape(scales, (n, 2)))
        self.opacities = _frozen(np.reshape(opacities, (n,)))
        self.colors = _frozen(np.reshape(colors, (n, 3)))
        self.native_scales = _frozen(np.reshape(native_scales, (n,)))
        self.parent_scales = _frozen(
            np.full(n, np.nan) if parent_scales is None else np.reshape(parent_scales, (n,)))
        self.child_scales = _frozen(
            np.full(n, np.nan) if child_scales is None else np.reshape(child_scales, (n,)))
        self._validate()

    def _validate(self):
        if self.scale_index < 0:
            raise SceneError("scale_index must be non-negative")
        if self.parent_layer is None and self.scale_index != 0:
            raise SceneError("a layer without a parent must have scale_index 0")
        if self.parent_layer is not None and self.scale_index == 0:
            raise SceneError("a layer with a parent cannot have scale_index 0")
        qn = np.linalg.norm(self.quats, axis=1)
        if np.any(np.abs(qn - 1.0) > QUAT_TOL):
            raise SceneError("surfel quaternions must be unit length")
        if np.any(self.scales <= 0):
            raise SceneError("surfel scales must be positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise SceneError("surfel opacities must lie in [0, 1]")
        if np.any(self.native_scales <= 0):
            raise SceneError("native scales must be positive")
        hp = ~np.isnan(self.parent_scales)
        if np.any(self.parent_scales[hp] <= self.native_scales[hp]):
            raise SceneError("parent scale bounds must exceed native scales")
        hc = ~np.isnan(self.child_scales)
        if np.any(self.child_scales[hc] >= self.native_scales[hc]):
            raise SceneError("child scale bounds must be below native scales")
        if np.any(self.child_scales[hc] <= 0):
            raise SceneError("child scale bounds must be positive")

    def __len__(self) -> int:
        return len(self.positions)

    def thickness(self) -> np.ndarray:
        """Per-surfel thickness epsilon along the local normal."""
        return THICKNESS_FRAC * np.min(self.scales, axis=1)

    def surfel(self, i: int) -> Surfel:
        return Surfel(
            position=self.positions[i], quat=self.quats[i], scales=self.scales[i],
            opacity=float(self.opacities[i]), color=self.colors[i],
            native_scale=float(self.native_scales[i]),
            parent_scale=float(self.parent_scales[i]),
            child_scale=float(self.child_scales[i]),
            layer=-1 if self.index is None else self.index)

    def with_params(self, quats=None, scales=None, opacities=None) -> "ScaleLayer":
        """Copy with replaced optimizable parameters (q, s, o)."""
        return self._copy(
            quats=self.quats if quats is None else quats,
            scales=self.scales if scales is None else scales,
            opacities=self.opacities if opacities is None else opacities,
            child_scales=self.child_scales)

    def _with_child_scales(self, child_scales: np.ndarray) -> "ScaleLayer":
        return self._copy(quats=self.quats, scales=self.scales,
                          opacities=self.opacities, child_scales=child_scales)

    def _copy(self, quats, scales, opacities, child_scales) -> "ScaleLayer":
        layer = ScaleLayer(
            creation_camera=self.creation_camera, positions=self.positions,
            quats=quats, scales=scales, opacities=opacities, colors=self.colors,
            native_scales=self.native_scales, parent_scales=self.parent_scales,
            child_scales=child_scales, parent_layer=self.parent_layer,
            scale_index=self.scale_index, prompt=self.prompt)
        layer.index = self.index
        return layer


@dataclass(frozen=True)
class SceneSnapshot:
    """Immutable view of the scene at a point in time."""

    layers: tuple  # tuple[ScaleLayer, ...]
    version: int

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def total_surfels(self) -> int:
        return sum(len(layer) for layer in self.layers)


def snapshot_of(layers) -> SceneSnapshot:
    """Ad-hoc snapshot over standalone layers (e.g. a partial layer)."""
    return SceneSnapshot(layers=tuple(layers), version=0)


class MultiScaleScene:
    """Ordered collection of scale layers with parent/child lineage."""

    def __init__(self):
        self._layers: tuple = ()
        self._version = 0
        self._lock = threading.Lock()

    # -- reads ---------------------------------------------------------------

    def snapshot(self) -> SceneSnapshot:
        with self._lock:
            return SceneSnapshot(layers=self._layers, version=self._version)

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def __len__(self) -> int:
        return len(self._layers)

    @property
    def layers(self) -> tuple:
        return self._layers

    @property
    def total_surfels(self) -> int:
        return sum(len(layer) for layer in self._layers)

    # -- writes --------------------------------------------------------------

    def _check_layer(self, layers: tuple, layer: ScaleLayer):
        idx = len(layers)
        if layer.parent_layer is None:
            if idx != 0:
                raise SceneError("only layer 0 may omit a parent")
            if layer.scale_index != 0:
                raise SceneError("root layer must have scale_index 0")
        else:
            if not (0 <= layer.parent_layer < idx):
                raise SceneError(
                    f"dangling parent index {layer.parent_layer} (scene has {idx} layers)")
            parent = layers[layer.parent_layer]
            if layer.scale_index != parent.scale_index + 1:
                raise SceneError(
                    f"scale_index {layer.scale_index} must be parent's + 1 "
                    f"({parent.scale_index + 1})")
            pf = parent.creation_camera.focal_mean
            cf = layer.creation_camera.focal_mean
            if not (cf > pf):
                raise SceneError("child creation focal must exceed the parent's")

    def add_layer(self, layer: ScaleLayer) -> int:
        """Atomically append a layer; returns its index."""
        with self._lock:
            self._check_layer(self._layers, layer)
            idx = len(self._layers)
            layer.index = idx
            self._layers = self._layers + (layer,)
            self._version += 1
            return idx

    def assign_child_bounds(self, parent_layer: int, child_camera: Camera) -> int:
        """Write-once child bounds on parent surfels inside the child frustum.

        Returns the number of surfels assigned. Surfels projecting outside
        the child image, behind it, or already carrying a child bound are
        left untouched (first child wins).
        """
        with self._lock:
            updated, count = self._child_bounds_update(
                self._layers, parent_layer, child_camera)
            if updated is not None:
                layers = list(self._layers)
                layers[parent_layer] = updated
                self._layers = tuple(layers)
                self._version += 1
            return count

    def _child_bounds_update(self, layers: tuple, parent_layer: int,
                             child_camera: Camera):
        if not (0 <= parent_layer < len(layers)):
            raise SceneError(f"unknown parent layer {parent_layer}")
        parent = layers[parent_layer]
        pixels, depths, in_front = project_points(parent.positions, child_camera)
        inside = (in_front
                  & (pixels[:, 0] >= 0) & (pixels[:, 0] < child_camera.width)
                  & (pixels[:, 1] >= 0) & (pixels[:, 1] < child_camera.height))
        eligible = inside & np.isnan(parent.child_scales)
        count = int(np.count_nonzero(eligible))
        if count == 0:
            return None, 0
        new_child = parent.child_scales.copy()
        new_child[eligible] = depths[eligible] / child_camera.focal_mean
        bad = eligible & ~(new_child < parent.native_scales)
        if np.any(bad):
            raise SceneError(
                "child camera yields child bounds not below native scales")
        return parent._with_child_scales(new_child), count

    def commit_child_layer(self, parent_layer: int, child_camera: Camera,
                           layer: ScaleLayer) -> int:
        """Assign parent child-bounds and append the child in one atomic step.

        Either both effects land or, on any validation error, neither does.
        """
        with self._lock:
            self._check_layer(self._layers, layer)
            updated, _ = self._child_bounds_update(self._layers, parent_layer, child_camera)
            layers = list(self._layers)
            if updated is not None:
                layers[parent_layer] = updated
            idx = len(layers)
            layer.index = idx
            layers.append(layer)
            self._layers = tuple(layers)
            self._version += 1
            return idx

    def replace_layer(self, index: int, layer: ScaleLayer) -> None:
        """Swap in a re-fitted copy of the newest layer (optimization only).

        Prior layers are append-only; only the newest layer's parameters may
        change, and committed snapshots keep the old version.
        """
        with self._lock:
            if index != len(self._layers) - 1:
                raise SceneError("only the newest layer may be re-fitted")
            old = self._layers[index]
            if len(layer) != len(old) or not np.array_equal(layer.positions, old.positions):
                raise SceneError("re-fit must preserve surfel count and positions")
            layer.index = index
            layers = list(self._layers)
            layers[index] = layer
            self._layers = tuple(layers)
            self._version += 1
