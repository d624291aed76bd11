"""Scale-consistent depth registration against rendered target depth.

A new fine-scale depth map is fitted to the sparse depth rendered from the
coarser scene by a per-map affine transform (robust L1 via IRLS, initialized
from the L2 closed form), optionally refined segment-wise, and novel-object
regions are re-anchored by boundary medians. Registration never increases
the masked mean absolute error it minimizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Camera, DepthMap
from .rasterizer import render_depth
from .scene import SceneSnapshot

IRLS_ITERS = 20
IRLS_FLOOR = 1e-6
MIN_SEGMENT_PIXELS = 32
FEATHER_PX = 2


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AffineDepthParams:
    """depth -> a * depth + b"""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0):
            raise AlignmentError(f"affine depth scale must be positive, got {self.a}")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.a * values + self.b


@dataclass
class SegmentSet:
    """Per-pixel segment labels; 0 marks unassigned pixels, ids run 1..count."""

    labels: np.ndarray  # (H, W) integer
    count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.min() < 0 or self.labels.max() > self.count:
            raise AlignmentError("segment labels must lie in [0, count]")

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "SegmentSet":
        labels = np.asarray(labels)
        return cls(labels=labels, count=int(labels.max()))

    @classmethod
    def load_png16(cls, path) -> "SegmentSet":
        from PIL import Image

        arr = np.asarray(Image.open(path))
        return cls.from_labels(arr.astype(np.int64))

    @classmethod
    def load_rle_json(cls, path) -> "SegmentSet":
        """Run-length JSON: {"width", "height", "runs": [[label, length], ...]}."""
        import json

        with open(path) as f:
            data = json.load(f)
        w, h = int(data["width"]), int(data["height"])
        flat = np.zeros(w * h, dtype=np.int64)
        pos = 0
        for label, length in data["runs"]:
            flat[pos:pos + length] = label
            pos += length
        if pos != w * h:
            raise AlignmentError(f"run lengths cover {pos} pixels, expected {w * h}")
        return cls.from_labels(flat.reshape(h, w))


def masked_mae(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """The masked mean absolute discrepancy that registration minimizes."""
    m = int(np.count_nonzero(mask))
    if m == 0:
        return 0.0
    return float(np.sum(np.abs(target[mask] - pred[mask])) / m)


def _weighted_affine(pred, target, weights):
    """Weighted least squares for target ~ a * pred + b."""
    sw = weights.sum()
    swx = (weights * pred).sum()
    swxx = (weights * pred * pred).sum()
    swy = (weights * target).sum()
    swxy = (weights * pred * target).sum()
    det = swxx * sw - swx * swx
    if abs(det) < 1e-30:
        return None
    a = (swxy * sw - swx * swy) / det
    b = (swxx * swy - swx * swxy) / det
    return a, b


def _solve_affine_l1(pred: np.ndarray, target: np.ndarray):
    """IRLS-L1 fit of (a, b); returns the candidate with the lowest MAE.

    The identity and the L2 initializer participate as candidates, so the
    result never has a larger L1 residual than either. Candidates with
    non-positive scale (possible when the target carries no depth gradient)
    are discarded; the identity keeps the set non-empty.
    """
    def mae(a, b):
        return float(np.mean(np.abs(target - (a * pred + b))))

    candidates = [(1.0, 0.0)]
    fit = _weighted_affine(pred, target, np.ones_like(pred))
    if fit is None:
        raise AlignmentError("degenerate alignment: no spread in masked depths")
    candidates.append(fit)
    a, b = fit
    for _ in range(IRLS_ITERS):
        r = np.abs(target - (a * pred + b))
        w = 1.0 / np.maximum(r, IRLS_FLOOR)
        fit = _weighted_affine(pred, target, w)
        if fit is None:
            break
        a, b = fit
        candidates.append((a, b))
    best = min((c for c in candidates if c[0] > 0), key=lambda ab: mae(*ab))
    return best[0], best[1], mae(*best)


def global_align(pred: DepthMap, target: DepthMap, mask: np.ndarray = None):
    """Fit target ~ a * pred + b over the masked pixels.

    Returns (AffineDepthParams, residual) with residual the achieved masked
    MAE. Requires at least two masked pixels with distinct predictions.
    """
    mask = _combined_mask(pred, target, mask)
    n = int(np.count_nonzero(mask))
    if n < 2:
        raise AlignmentError(f"alignment needs >= 2 masked pixels, got {n}")
    p = pred.values[mask]
    t = target.values[mask]
    if np.ptp(p) == 0:
        raise AlignmentError("degenerate mask: all predicted depths equal")
    a, b, residual = _solve_affine_l1(p, t)
    return AffineDepthParams(a=a, b=b), residual


def _combined_mask(pred: DepthMap, target: DepthMap, mask) -> np.ndarray:
    if pred.shape != target.shape:
        raise AlignmentError("depth map dimensions differ")
    combined = pred.validity & target.validity
    if mask is not None:
        combined = combined & np.asarray(mask, dtype=bool)
    return combined


def segment_align(pred: DepthMap, target: DepthMap, mask: np.ndarray,
                  segments: SegmentSet) -> DepthMap:
    """Per-segment affine refinement of an already globally aligned map.

    Segments with fewer than 32 masked pixels, or no masked overlap, keep
    the global alignment. The per-pixel transform field is feathered over a
    2-pixel band so segment boundaries do not seam.
    """
    if segments.labels.shape != pred.shape:
        raise AlignmentError("segment labels must match the depth dimensions")
    fit_mask = _combined_mask(pred, target, mask)
    a_map = np.ones(pred.shape)
    b_map = np.zeros(pred.shape)
    for seg in range(1, segments.count + 1):
        in_seg = segments.labels == seg
        seg_fit = in_seg & fit_mask
        if int(np.count_nonzero(seg_fit)) < MIN_SEGMENT_PIXELS:
            continue
        p = pred.values[seg_fit]
        if np.ptp(p) == 0:
            continue
        a, b, _ = _solve_affine_l1(p, target.values[seg_fit])
        if a <= 0:
            continue
        a_map[in_seg] = a
        b_map[in_seg] = b
    size = 2 * FEATHER_PX + 1
    a_map = ndimage.uniform_filter(a_map, size=size, mode="nearest")
    b_map = ndimage.uniform_filter(b_map, size=size, mode="nearest")
    values = a_map * pred.values + b_map
    validity = pred.validity & (values > 0)
    return DepthMap(np.where(validity, values, 0.0), validity)


@dataclass
class RegistrationResult:
    depth: DepthMap
    aligned: bool  # False = passthrough (no coarse coverage)
    residual: float = 0.0


def register_depth(fine_depth: DepthMap, snapshot: SceneSnapshot, camera: Camera,
                   segments: SegmentSet = None,
                   novel_masks: list = None) -> RegistrationResult:
    """Register a provider depth map to the coarse scene at `camera`.

    Renders the target depth from the snapshot, applies global then
    segment-wise alignment, and re-anchors each novel-object region by
    shifting it until its inner boundary median meets the surrounding median.
    With no coarse coverage at all the input is passed through unchanged
    (aligned=False).
    """
    target = render_depth(snapshot, camera)
    if not np.any(target.validity & fine_depth.validity):
        return RegistrationResult(depth=fine_depth.copy(), aligned=False)

    input_mae = masked_mae(fine_depth.values, target.values,
                           fine_depth.validity & target.validity)
    try:
        params, residual = global_align(fine_depth, target)
    except AlignmentError:
        # constant-depth content leaves the affine fit underdetermined;
        # the map passes through unchanged rather than failing the pipeline
        return RegistrationResult(depth=fine_depth.copy(), aligned=False,
                                  residual=input_mae)
    values = params.apply(fine_depth.values)
    validity = fine_depth.validity & (values > 0)
    registered = DepthMap(np.where(validity, values, 0.0), validity)

    if segments is not None:
        registered = segment_align(registered, target, None, segments)

    if novel_masks:
        registered = registered.copy()
        for mask in novel_masks:
            registered = _anchor_novel_region(registered, np.asarray(mask, dtype=bool))

    out_mae = masked_mae(registered.values, target.values,
                         registered.validity & target.validity)
    if out_mae > input_mae:
        # alignment must never worsen the masked discrepancy
        return RegistrationResult(depth=fine_depth.copy(), aligned=False,
                                  residual=input_mae)
    return RegistrationResult(depth=registered, aligned=True, residual=out_mae)


def _anchor_novel_region(depth: DepthMap, mask: np.ndarray) -> DepthMap:
    """Shift a novel object's depth so its boundary meets the surroundings.

    The outer ring (3-pixel dilation minus the mask) samples the surrounding
    registered depth; the inner ring (mask minus 3-pixel erosion) samples the
    object's own boundary. The difference of their medians is added inside
    the mask, preserving the object's internal relief.
    """
    if mask.shape != depth.shape:
        raise AlignmentError("novel mask dimensions must match the depth map")
    if not np.any(mask):
        return depth
    structure = ndimage.generate_binary_structure(2, 1)
    outer = ndimage.binary_dilation(mask, structure, iterations=3) & ~mask
    inner = mask & ~ndimage.binary_erosion(mask, structure, iterations=3)
    if not np.any(inner):
        inner = mask
    outer_valid = outer & depth.validity
    inner_valid = inner & depth.validity
    if not np.any(outer_valid) or not np.any(inner_valid):
        return depth
    shift = float(np.median(depth.values[outer_valid])
                  - np.median(depth.values[inner_valid]))
    values = depth.values.copy()
    values[mask] += shift
    validity = depth.validity & np.where(mask, values > 0, True)
    return DepthMap(np.where(validity, values, 0.0), validity)
