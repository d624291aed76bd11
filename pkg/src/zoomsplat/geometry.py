"""Cameras, pinhole projection, back-projection, and depth-derived normals.

Conventions used throughout the package:

- Camera pose is a 4x4 world-to-camera rigid transform; a world point X maps
  to camera frame as ``R @ X + t`` with ``R = pose[:3, :3]``, ``t = pose[:3, 3]``.
- The camera looks down +z in its own frame; depth is the camera-frame z
  coordinate (not ray length).
- Continuous pixel coordinates: pixel (i, j) covers [i, i+1) x [j, j+1) and
  has its center at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

BEHIND_EPS = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: 4x4 world-to-camera pose plus intrinsics in pixels."""

    pose: np.ndarray  # (4, 4) float64, world-to-camera
    fx: float
    fy: float
    width: int
    height: int
    cx: float = None  # defaults to width / 2
    cy: float = None  # defaults to height / 2

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise GeometryError(f"pose must be 4x4, got {pose.shape}")
        R = pose[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise GeometryError("pose rotation block is not orthonormal")
        if not np.isclose(np.linalg.det(R), 1.0, atol=1e-9):
            raise GeometryError("pose rotation block must have determinant +1")
        if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise GeometryError("pose bottom row must be [0, 0, 0, 1]")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise GeometryError("image size must be at least 1x1")
        pose = pose.copy()
        pose.flags.writeable = False
        object.__setattr__(self, "pose", pose)
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def focal_mean(self) -> float:
        """Geometric mean focal length, the normalizer of observation scale."""
        return float(np.sqrt(self.fx * self.fy))

    def to_json(self) -> dict:
        return {
            "pose": [float(v) for v in self.pose.reshape(-1)],
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "w": int(self.width),
            "h": int(self.height),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Camera":
        pose = np.asarray(data["pose"], dtype=np.float64).reshape(4, 4)
        return cls(
            pose=pose,
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            width=int(data["w"]),
            height=int(data["h"]),
            cx=float(data.get("cx", data["w"] / 2.0)),
            cy=float(data.get("cy", data["h"] / 2.0)),
        )


def identity_camera(width: int, height: int, fx: float, fy: float = None,
                    cx: float = None, cy: float = None) -> Camera:
    """Camera at the world origin looking down +z."""
    return Camera(pose=np.eye(4), fx=fx, fy=fy if fy is not None else fx,
                  width=width, height=height, cx=cx, cy=cy)


@dataclass
class DepthMap:
    """Per-pixel z-depth in world units with a validity mask."""

    values: np.ndarray  # (H, W) float64
    validity: np.ndarray = None  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise GeometryError("depth values must be a 2-D array")
        if self.validity is None:
            self.validity = np.isfinite(self.values) & (self.values > 0)
        else:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.values.shape:
                raise GeometryError("validity mask shape mismatch")
        bad = self.validity & ~(np.isfinite(self.values) & (self.values > 0))
        if np.any(bad):
            raise GeometryError("valid depths must be finite and positive")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.validity.copy())

    def save_bin(self, path) -> int:
        """Write as little-endian f32 with an 8-byte (width, height) header.

        Invalid pixels are stored as NaN so validity round-trips.
        """
        h, w = self.values.shape
        out = self.values.astype("<f4")
        out[~self.validity] = np.nan
        payload = struct.pack("<II", w, h) + out.tobytes()
        with open(path, "wb") as f:
            f.write(payload)
        return len(payload)

    @classmethod
    def load_bin(cls, path) -> "DepthMap":
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < 8:
            raise GeometryError(f"depth file too short: {path}")
        w, h = struct.unpack("<II", raw[:8])
        expect = 8 + 4 * w * h
        if len(raw) != expect:
            raise GeometryError(f"depth file truncated: {path} ({len(raw)} != {expect} bytes)")
        values = np.frombuffer(raw[8:], dtype="<f4").reshape(h, w).astype(np.float64)
        return cls(values)

    @classmethod
    def load_png16(cls, path, scale: float = 1000.0) -> "DepthMap":
        """Import lossless 16-bit grayscale depth; stored value = depth * scale."""
        from PIL import Image

        img = Image.open(path)
        arr = np.asarray(img)
        if arr.dtype != np.uint16:
            raise GeometryError(f"expected 16-bit grayscale PNG, got dtype {arr.dtype}")
        values = arr.astype(np.float64) / scale
        return cls(values, validity=arr > 0)

    def save_png16(self, path, scale: float = 1000.0) -> None:
        from PIL import Image

        stored = np.round(self.values * scale)
        if np.any(self.validity & (stored > np.iinfo(np.uint16).max)):
            raise GeometryError("depth exceeds 16-bit range at this scale")
        out = np.where(self.validity, stored, 0).astype(np.uint16)
        Image.fromarray(out).save(path)


# ---------------------------------------------------------------------------
# Projection / back-projection


def camera_points(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Transform world points (N, 3) into the camera frame."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ camera.rotation.T + camera.translation


def camera_depths(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Camera-frame z-depth of world points (N, 3).

    All scale computations in the package route through this helper so that
    a surfel's stored scale bound and the render-time scale of the same
    position under the same camera are bitwise identical.
    """
    return camera_points(points, camera)[:, 2]


def project_points(points: np.ndarray, camera: Camera):
    """Batch pinhole projection.

    Args:
        points: (N, 3) world coordinates.

    Returns:
        pixels: (N, 2) continuous pixel coordinates (garbage where invalid).
        depths: (N,) camera-frame z.
        valid: (N,) bool, False where the point sits behind the camera
            (z <= 1e-9); this is a flag, never an exception.
    """
    pc = camera_points(points, camera)
    z = pc[:, 2]
    valid = z > BEHIND_EPS
    zs = np.where(valid, z, 1.0)
    u = camera.fx * pc[:, 0] / zs + camera.cx
    v = camera.fy * pc[:, 1] / zs + camera.cy
    return np.stack([u, v], axis=-1), z, valid


def project(point: np.ndarray, camera: Camera):
    """Project a single world point; returns (pixel (2,), depth, in_front)."""
    pixels, depths, valid = project_points(np.asarray(point, dtype=np.float64)[None, :], camera)
    return pixels[0], float(depths[0]), bool(valid[0])


def back_project(pixel: np.ndarray, depth: float, camera: Camera) -> np.ndarray:
    """Lift a pixel at a given z-depth back to a world point.

    Inverse of :func:`project` for depth > 0; the round trip is exact to
    floating-point precision.
    """
    if depth <= 0:
        raise GeometryError(f"back_project requires depth > 0, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    x = (u - camera.cx) / camera.fx * depth
    y = (v - camera.cy) / camera.fy * depth
    pc = np.array([x, y, depth], dtype=np.float64)
    return camera.rotation.T @ (pc - camera.translation)


def back_project_grid(depth: DepthMap, camera: Camera) -> np.ndarray:
    """Back-project every pixel center of a depth map.

    Returns (H, W, 3) world points; entries at invalid pixels are computed
    from the raw values and should be ignored via the validity mask.
    """
    h, w = depth.shape
    if (h, w) != (camera.height, camera.width):
        raise GeometryError("depth map dimensions must match the camera")
    us = (np.arange(w, dtype=np.float64) + 0.5)[None, :].repeat(h, axis=0)
    vs = (np.arange(h, dtype=np.float64) + 0.5)[:, None].repeat(w, axis=1)
    z = np.where(depth.validity, depth.values, 1.0)
    x = (us - camera.cx) / camera.fx * z
    y = (vs - camera.cy) / camera.fy * z
    pc = np.stack([x, y, z], axis=-1)  # (H, W, 3) camera frame
    world = pc.reshape(-1, 3) @ camera.rotation + (-camera.rotation.T @ camera.translation)
    return world.reshape(h, w, 3)


def view_directions(camera: Camera, h: int = None, w: int = None) -> np.ndarray:
    """Unit view-ray direction (world frame) through every pixel center."""
    h = h or camera.height
    w = w or camera.width
    us = (np.arange(w, dtype=np.float64) + 0.5)[None, :].repeat(h, axis=0)
    vs = (np.arange(h, dtype=np.float64) + 0.5)[:, None].repeat(w, axis=1)
    d = np.stack([(us - camera.cx) / camera.fx, (vs - camera.cy) / camera.fy,
                  np.ones_like(us)], axis=-1)
    d = d.reshape(-1, 3) @ camera.rotation  # R^T @ d, row form
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d.reshape(h, w, 3)


def normals_from_depth(depth: DepthMap, camera: Camera) -> np.ndarray:
    """Per-pixel unit normals from central differences of back-projected points.

    Normals are oriented toward the camera (negative dot with the view ray).
    Pixels with too few valid neighbors fall back to exactly facing the
    camera. One-sided differences are used at image borders.

    Returns:
        (H, W, 3) unit normal map in world coordinates.
    """
    if int(np.count_nonzero(depth.validity)) < 4:
        # degenerate maps still get the camera-facing fallback everywhere
        return -view_directions(camera)

    h, w = depth.shape
    pts = back_project_grid(depth, camera)
    valid = depth.validity

    def diff(axis):
        # central differences where both neighbors valid, one-sided otherwise
        d = np.zeros((h, w, 3))
        ok = np.zeros((h, w), dtype=bool)
        fwd = np.roll(pts, -1, axis=axis)
        bwd = np.roll(pts, 1, axis=axis)
        vf = np.roll(valid, -1, axis=axis)
        vb = np.roll(valid, 1, axis=axis)
        # roll wraps around; kill the wrapped rows/cols
        if axis == 0:
            vf[-1, :] = False
            vb[0, :] = False
        else:
            vf[:, -1] = False
            vb[:, 0] = False
        central = vf & vb
        d[central] = (fwd - bwd)[central]
        fonly = vf & ~vb
        d[fonly] = (fwd - pts)[fonly]
        bonly = vb & ~vf
        d[bonly] = (pts - bwd)[bonly]
        ok = (vf | vb) & valid
        return d, ok

    du, oku = diff(axis=1)
    dv, okv = diff(axis=0)
    n = np.cross(du, dv)
    norms = np.linalg.norm(n, axis=-1)
    ok = oku & okv & (norms > 1e-15)

    fallback = -view_directions(camera)
    out = fallback.copy()
    out[ok] = n[ok] / norms[ok][..., None]
    # orient toward the camera
    flip = np.sum(out * -fallback, axis=-1) > 0  # dot(view_dir, n) > 0
    out[flip] = -out[flip]
    return out


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z convention)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (..., 4) to rotation matrix (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix (3, 3) to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_z_to(direction: np.ndarray) -> np.ndarray:
    """Quaternion rotating the local +z axis onto a unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    c = float(np.dot(z, d))
    if c > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if c < -1.0 + 1e-12:
        # 180 degrees about x
        return np.array([0.0, 1.0, 0.0, 0.0])
    axis = np.cross(z, d)
    axis /= np.linalg.norm(axis)
    half = np.arccos(np.clip(c, -1.0, 1.0)) / 2.0
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quats_from_z_to(directions: np.ndarray) -> np.ndarray:
    """Vectorized :func:`quat_from_z_to` for (N, 3) unit directions."""
    d = np.asarray(directions, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    c = d[:, 2]
    out = np.zeros((len(d), 4))
    aligned = c > 1.0 - 1e-12
    opposite = c < -1.0 + 1e-12
    out[aligned] = [1.0, 0.0, 0.0, 0.0]
    out[opposite] = [0.0, 1.0, 0.0, 0.0]
    rest = ~(aligned | opposite)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(np.broadcast_to(z, d[rest].shape), d[rest])
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    half = np.arccos(np.clip(c[rest], -1.0, 1.0)) / 2.0
    out[rest, 0] = np.cos(half)
    out[rest, 1:] = np.sin(half)[:, None] * axis
    return out
