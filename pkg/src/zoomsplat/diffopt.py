"""Differentiable rendering and per-layer fitting.

The loss is 0.8 L1 + 0.2 (1 - SSIM) / 2 against each training view.
Gradients for the newest layer's orientation, scales, and opacity are
hand-derived through the compositing chain (positions, colors, and native
scales stay frozen); the opacity-modulation weight depends only on frozen
quantities and therefore enters as a constant per-surfel multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from . import _kernels
from .geometry import Camera, camera_points, quat_to_rot
from .modulation import opacity_weights
from .rasterizer import (TILE, Frame, RenderConfig, _pack_rows, _sorted_plan,
                         _tile_lists, cull)
from .scene import SCALE_FLOOR, SceneSnapshot, ScaleLayer, snapshot_of

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WIN = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 500
    lr_quat: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2  # applied in logit space
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    w_l1: float = 0.8
    w_ssim: float = 0.2

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if abs(self.w_l1 + self.w_ssim - 1.0) > 1e-12:
            raise ValueError("loss weights must sum to 1")


# ---------------------------------------------------------------------------
# Photometric loss (L1 + D-SSIM) and its image gradient


def _ssim_kernel() -> np.ndarray:
    half = SSIM_WIN // 2
    g = np.exp(-np.arange(-half, half + 1, dtype=np.float64) ** 2 / (2 * SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


_KERNEL = _ssim_kernel()


def _valid(arr: np.ndarray) -> np.ndarray:
    half = SSIM_WIN // 2
    return arr[half:arr.shape[0] - half, half:arr.shape[1] - half]


def _ssim_maps(x: np.ndarray, y: np.ndarray):
    """Per-channel SSIM over valid window positions; returns the mean plus
    the intermediate maps needed for the backward pass."""
    maps = []
    total = 0.0
    count = 0
    for ch in range(x.shape[2]):
        xc, yc = x[:, :, ch], y[:, :, ch]
        mx = _valid(correlate(xc, _KERNEL, mode="constant"))
        my = _valid(correlate(yc, _KERNEL, mode="constant"))
        mxx = _valid(correlate(xc * xc, _KERNEL, mode="constant"))
        myy = _valid(correlate(yc * yc, _KERNEL, mode="constant"))
        mxy = _valid(correlate(xc * yc, _KERNEL, mode="constant"))
        a1 = 2 * mx * my + SSIM_C1
        a2 = 2 * (mxy - mx * my) + SSIM_C2
        b1 = mx * mx + my * my + SSIM_C1
        b2 = (mxx - mx * mx) + (myy - my * my) + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        maps.append((mx, my, a1, a2, b1, b2, s))
        total += s.sum()
        count += s.size
    return total / count if count else 1.0, maps


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) averaged over channels."""
    mean, _ = _ssim_maps(np.asarray(x, dtype=np.float64),
                         np.asarray(y, dtype=np.float64))
    return float(mean)


def photometric_loss(render, target: np.ndarray) -> float:
    """0.8 * mean L1 + 0.2 * (1 - SSIM) / 2, both on [0, 1] RGB."""
    img = render.color if isinstance(render, Frame) else np.asarray(render)
    target = np.asarray(target, dtype=np.float64)
    if img.shape != target.shape:
        raise ValueError(f"image dimensions differ: {img.shape} vs {target.shape}")
    l1 = float(np.mean(np.abs(img - target)))
    return 0.8 * l1 + 0.2 * (1.0 - ssim(img, target)) / 2.0


def photometric_loss_grad(image: np.ndarray, target: np.ndarray,
                          w_l1: float = 0.8, w_ssim: float = 0.2):
    """Loss and its gradient with respect to the rendered image."""
    x = np.asarray(image, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image dimensions differ: {x.shape} vs {y.shape}")
    diff = x - y
    l1 = float(np.mean(np.abs(diff)))
    grad = w_l1 * np.sign(diff) / diff.size

    mean_ssim, maps = _ssim_maps(x, y)
    loss = w_l1 * l1 + w_ssim * (1.0 - mean_ssim) / 2.0

    # d(mean SSIM)/dX via the window-statistic maps; the -w_ssim/2 factor
    # folds the D-SSIM definition in.
    half = SSIM_WIN // 2
    h, w, _ = x.shape
    pos = maps[0][0].size * x.shape[2]
    if pos == 0:  # image smaller than the window: no SSIM term
        return loss, grad
    coef = -w_ssim / 2.0 / pos

    def spread(g_valid):
        padded = np.zeros((h, w))
        padded[half:h - half, half:w - half] = g_valid
        return correlate(padded, _KERNEL, mode="constant")

    for ch, (mx, my, a1, a2, b1, b2, s) in enumerate(maps):
        d_mx = 2 * my * (a2 - a1) / (b1 * b2) - 2 * mx * s * (b2 - b1) / (b1 * b2)
        d_mxx = -s / b2
        d_mxy = 2 * a1 / (b1 * b2)
        grad[:, :, ch] += coef * (
            spread(d_mx)
            + 2 * x[:, :, ch] * spread(d_mxx)
            + y[:, :, ch] * spread(d_mxy))
    return loss, grad


def psnr(image: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(image) - np.asarray(target)) ** 2))
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# Backward pass through compositing and footprint projection


def _quat_rot_jacobian(quats: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(unit quaternion): (N, 4, 3, 3)."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    zero = np.zeros_like(w)
    J = np.empty((len(quats), 4, 3, 3))
    J[:, 0] = 2 * np.stack([zero, -z, y, z, zero, -x, -y, x, zero],
                           axis=-1).reshape(-1, 3, 3)
    J[:, 1] = 2 * np.stack([zero, y, z, y, -2 * x, -w, z, w, -2 * x],
                           axis=-1).reshape(-1, 3, 3)
    J[:, 2] = 2 * np.stack([-2 * y, x, w, x, zero, z, -w, z, -2 * y],
                           axis=-1).reshape(-1, 3, 3)
    J[:, 3] = 2 * np.stack([-2 * z, -w, x, w, -2 * z, y, x, y, zero],
                           axis=-1).reshape(-1, 3, 3)
    return J


@dataclass
class LayerGrads:
    quats: np.ndarray  # (N, 4)
    scales: np.ndarray  # (N, 2)
    opacities: np.ndarray  # (N,)


def _loss_and_grads(backdrop_layers: tuple, layer: ScaleLayer, camera: Camera,
                    target: np.ndarray, optim: OptimConfig,
                    render_cfg: RenderConfig):
    """Photometric loss of (backdrop + layer) at `camera` and gradients for
    the layer's q, s, o. Backdrop layers receive no gradients."""
    snap = snapshot_of(tuple(backdrop_layers) + (layer,))
    opt_lid = len(snap.layers) - 1

    plan = _sorted_plan(cull(snap, camera, render_cfg))
    offsets, lists = _tile_lists(plan, camera.width, camera.height)
    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3))
    depth_sum = np.zeros((h, w))
    alpha = np.zeros((h, w))
    tile_counts = np.zeros(len(offsets) - 1, dtype=np.int64)
    bg = np.asarray(render_cfg.background, dtype=np.float64)
    exp_cutoff = 0.5 * render_cfg.gaussian_cutoff**2
    _kernels.composite_forward(
        _pack_rows(plan, exp_cutoff), offsets, lists, w, h, TILE, bg, render_cfg.max_alpha,
        render_cfg.transmittance_floor, exp_cutoff,
        color, depth_sum, alpha, tile_counts)

    loss, g_image = photometric_loss_grad(color, target, optim.w_l1, optim.w_ssim)

    g_omod_flat = np.zeros(len(plan))
    g_conic_flat = np.zeros((len(plan), 3))
    _kernels.composite_backward(
        _pack_rows(plan, exp_cutoff), offsets, lists, w, h, TILE,
        render_cfg.max_alpha, render_cfg.transmittance_floor, exp_cutoff,
        color, g_image, g_omod_flat, g_conic_flat)

    # scatter flat gradients back to the optimized layer's surfels
    n = len(layer)
    g_omod = np.zeros(n)
    g_conic = np.zeros((n, 3))
    sel = plan.layer_ids == opt_lid
    g_omod[plan.surfel_ids[sel]] = g_omod_flat[sel]
    g_conic[plan.surfel_ids[sel]] = g_conic_flat[sel]

    grads = _chain_to_params(layer, camera, g_omod, g_conic, render_cfg)
    return loss, grads, color


def _chain_to_params(layer: ScaleLayer, camera: Camera, g_omod: np.ndarray,
                     g_conic: np.ndarray, render_cfg: RenderConfig) -> LayerGrads:
    """Propagate d/d(omod) and d/d(conic) to d/d(q, s, o)."""
    n = len(layer)
    pc = camera_points(layer.positions, camera)
    z = np.where(pc[:, 2] > 1e-9, pc[:, 2], 1.0)

    # modulation weight is a frozen multiplier: omod = o * weight
    if render_cfg.modulation:
        s_render = pc[:, 2] / camera.focal_mean
        s_render = np.where(pc[:, 2] > 1e-9, s_render, layer.native_scales)
        weights = opacity_weights(s_render, layer.native_scales,
                                  layer.parent_scales, layer.child_scales)
    else:
        weights = np.ones(n)
    g_o = g_omod * weights

    # conic -> cov2d: dL/dcov = -K Gk K with Gk the symmetric matrix gradient
    K = np.empty((n, 2, 2))
    K[:, 0, 0] = 0.0  # filled below from the stored conics
    conics = _conics_for(layer, camera, render_cfg.gaussian_cutoff)
    K[:, 0, 0] = conics[:, 0]
    K[:, 0, 1] = conics[:, 1]
    K[:, 1, 0] = conics[:, 1]
    K[:, 1, 1] = conics[:, 2]
    Gk = np.empty((n, 2, 2))
    Gk[:, 0, 0] = g_conic[:, 0]
    Gk[:, 0, 1] = 0.5 * g_conic[:, 1]
    Gk[:, 1, 0] = 0.5 * g_conic[:, 1]
    Gk[:, 1, 1] = g_conic[:, 2]
    g_cov = -np.einsum("nij,njk,nkl->nil", K, Gk, K)

    # cov2d = P Sigma P^T + reg, P = J W (frozen)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * pc[:, 0] / z**2
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * pc[:, 1] / z**2
    P = np.einsum("nij,jk->nik", J, camera.rotation)
    g_sigma = np.einsum("nji,njk,nkl->nil", P, g_cov, P)  # P^T g_cov P

    R = quat_to_rot(layer.quats)
    eps_t = layer.thickness()
    sx, sy = layer.scales[:, 0], layer.scales[:, 1]
    D = np.zeros((n, 3))
    D[:, 0] = sx**2
    D[:, 1] = sy**2
    D[:, 2] = eps_t**2

    # dL/dR = 2 (dL/dSigma) R D
    g_R = 2.0 * np.einsum("nij,njk->nik", g_sigma, R * D[:, None, :])
    dRdq = _quat_rot_jacobian(layer.quats)
    g_qhat = np.einsum("nkij,nij->nk", dRdq, g_R)
    # tangent projection of the internal normalization (quats stored unit)
    g_q = g_qhat - layer.quats * np.sum(layer.quats * g_qhat, axis=1, keepdims=True)

    # dL/dD diagonal, then to scales (thickness tracks the smaller scale)
    g_D = np.einsum("nji,njk,nki->ni", R, g_sigma, R)  # (N, 3) diag of R^T g R
    min_is_x = sx <= sy
    g_sx = g_D[:, 0] * 2 * sx + np.where(min_is_x, g_D[:, 2] * 2 * eps_t * 0.01, 0.0)
    g_sy = g_D[:, 1] * 2 * sy + np.where(~min_is_x, g_D[:, 2] * 2 * eps_t * 0.01, 0.0)

    return LayerGrads(quats=g_q, scales=np.stack([g_sx, g_sy], axis=-1),
                      opacities=g_o)


def _conics_for(layer: ScaleLayer, camera: Camera, cutoff: float) -> np.ndarray:
    from .rasterizer import _layer_footprints

    _, conics, _, _, _ = _layer_footprints(layer, camera, cutoff)
    return conics


def render_backward(snapshot: SceneSnapshot, layer_under_opt: int, camera: Camera,
                    target: np.ndarray, optim: OptimConfig = None,
                    render_cfg: RenderConfig = None):
    """Loss plus analytic gradients for the newest layer's q, s, o."""
    optim = optim or OptimConfig()
    render_cfg = render_cfg or RenderConfig()
    if layer_under_opt != len(snapshot.layers) - 1:
        raise ValueError("only the newest layer may be optimized")
    layer = snapshot.layers[layer_under_opt]
    backdrop = snapshot.layers[:layer_under_opt]
    loss, grads, _ = _loss_and_grads(backdrop, layer, camera, target, optim, render_cfg)
    return loss, grads


# ---------------------------------------------------------------------------
# Adam and the layer-fitting loop


class Adam:
    """Standard Adam with bias correction, one instance per parameter group."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-15):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-7, 1 - 1e-7)
    return np.log(p / (1 - p))


def fit_layer(backdrop: SceneSnapshot, layer: ScaleLayer, views,
              config: OptimConfig = None, render_cfg: RenderConfig = None):
    """Adam-fit a (not yet committed) layer's q, s, o against training views.

    `views` is a non-empty list of (image, Camera) pairs; steps cycle through
    them round-robin. Returns (fitted_layer, trace) where trace rows are
    (step, loss, psnr) for the view used at that step.
    """
    config = config or OptimConfig()
    render_cfg = render_cfg or RenderConfig()
    if not views:
        raise ValueError("at least one training view is required")
    for image, cam in views:
        img = np.asarray(image)
        if img.shape != (cam.height, cam.width, 3):
            raise ValueError("view image dimensions must match its camera")

    # scales optimize in log space and opacities in logit space: steps stay
    # multiplicative across the 8^n scale hierarchy and o stays inside (0, 1)
    quats = layer.quats.copy()
    log_s = np.log(layer.scales.copy())
    theta = _logit(layer.opacities.copy())

    opt_q = Adam(quats.shape, config.lr_quat, config.beta1, config.beta2, config.eps)
    opt_s = Adam(log_s.shape, config.lr_scale, config.beta1, config.beta2, config.eps)
    opt_o = Adam(theta.shape, config.lr_opacity, config.beta1, config.beta2, config.eps)

    trace = []
    working = layer
    for step in range(config.steps):
        image, cam = views[step % len(views)]
        target = np.asarray(image, dtype=np.float64)
        loss, grads, rendered = _loss_and_grads(
            backdrop.layers, working, cam, target, config, render_cfg)
        trace.append((step, loss, psnr(rendered, target)))

        scales = np.exp(log_s)
        opac = 1.0 / (1.0 + np.exp(-theta))
        g_log_s = grads.scales * scales
        g_theta = grads.opacities * opac * (1 - opac)
        quats = opt_q.step(quats, grads.quats)
        log_s = opt_s.step(log_s, g_log_s)
        theta = opt_o.step(theta, g_theta)

        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        scales = np.maximum(np.exp(log_s), SCALE_FLOOR)
        working = layer.with_params(
            quats=quats, scales=scales, opacities=1.0 / (1.0 + np.exp(-theta)))
    return working, trace


def optimize_layer(scene, layer: int, views, config: OptimConfig = None,
                   render_cfg: RenderConfig = None):
    """Re-fit the newest committed layer in place (atomic swap).

    Other layers are bitwise untouched. Returns (fitted_layer, trace).
    """
    snap = scene.snapshot()
    if layer != len(snap.layers) - 1:
        raise ValueError("only the newest layer may be optimized")
    backdrop = SceneSnapshot(layers=snap.layers[:layer], version=snap.version)
    fitted, trace = fit_layer(backdrop, snap.layers[layer], views, config, render_cfg)
    scene.replace_layer(layer, fitted)
    return fitted, trace


def write_trace_csv(trace, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "psnr"])
        for step, loss, value in trace:
            writer.writerow([step, f"{loss:.10g}", f"{value:.6g}"])
