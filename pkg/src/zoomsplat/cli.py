"""Command-line entry points: the full pipeline without the viewer.

Exit codes: 0 success, 1 user error (bad arguments, missing or malformed
files, busy states), 2 internal error.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from .depthreg import SegmentSet
from .diffopt import OptimConfig, optimize_layer, write_trace_csv
from .geometry import Camera, DepthMap, GeometryError, identity_camera
from .images import load_image, save_image
from .rasterizer import RenderConfig, render_with_stats
from .scene import MultiScaleScene, SceneError
from .sceneio import SceneIOError, load_scene, save_scene, scene_manifest
from .surfelize import pixel_aligned_surfels
from .synth import (DetailRequest, SynthConfig, SynthesisError, auxiliary_views,
                    make_provider, sweep_cameras, synthesize_scale)

PROVIDER_ENV = "ZOOMSPLAT_PROVIDER"

USER_ERRORS = (click.ClickException, GeometryError, SceneError, SceneIOError,
               SynthesisError, ValueError, FileNotFoundError, IsADirectoryError)


def _load_depth(path: str) -> DepthMap:
    if path.endswith(".png"):
        return DepthMap.load_png16(path)
    return DepthMap.load_bin(path)


def _camera_from_pose_file(path: str) -> Camera:
    from .rasterizer import DEFAULT_HEIGHT, DEFAULT_WIDTH

    with open(path) as f:
        data = json.load(f)
    data.setdefault("w", DEFAULT_WIDTH)
    data.setdefault("h", DEFAULT_HEIGHT)
    return Camera.from_json(data)


def _provider_option(value: str | None):
    spec = value or os.environ.get(PROVIDER_ENV, "procedural")
    return make_provider(spec)


@click.group()
def cli():
    """Multi-scale Gaussian surfel engine."""


@cli.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--depth", "depth_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--aux", default=0, show_default=True, help="Auxiliary views for the root layer.")
@click.option("--fx", default=1024.0, show_default=True)
@click.option("--fy", default=None, type=float)
@click.option("--steps", default=500, show_default=True, help="Optimization steps (0 skips).")
@click.option("--seed", default=0, show_default=True)
@click.option("--trace-out", default=None, type=click.Path(), help="Loss trace CSV.")
def init(image_path, depth_path, out_path, aux, fx, fy, steps, seed, trace_out):
    """Build the coarsest scene from an image + depth map and save it."""
    image = load_image(image_path)
    depth = _load_depth(depth_path)
    h, w = depth.shape
    camera = identity_camera(w, h, fx=fx, fy=fy if fy else fx)
    layer = pixel_aligned_surfels(image, depth, camera)
    scene = MultiScaleScene()
    scene.add_layer(layer)
    if steps > 0:
        views = [(image, camera)]
        if aux > 0:
            extra = auxiliary_views(layer, camera, aux, seed=seed)
            views += [(v.frame.color, v.camera) for v in extra]
        _, trace = optimize_layer(scene, 0, views, OptimConfig(steps=steps))
        if trace_out:
            write_trace_csv(trace, trace_out)
    save_scene(scene, out_path)
    click.echo(f"saved 1 layer ({len(layer)} surfels) to {out_path}")


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--layer", required=True, type=int)
@click.option("--center", required=True, help="U,V pixel in the layer's creation view.")
@click.option("--factor", default=8.0, show_default=True)
@click.option("--prompt", default="")
@click.option("--seed", default=0, show_default=True)
@click.option("--provider", default=None, help="procedural | stub | cmd:<command>")
@click.option("--segments", "segments_path", default=None, type=click.Path(exists=True))
@click.option("--aux", default=4, show_default=True)
@click.option("--steps", default=500, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def zoom(scene_path, layer, center, factor, prompt, seed, provider,
         segments_path, aux, steps, out_path):
    """Synthesize one finer-scale layer and save the grown scene."""
    scene = load_scene(scene_path)
    u, v = (float(x) for x in center.split(","))
    request = DetailRequest(parent_layer=layer, zoom_center=(u, v),
                            zoom_factor=factor, prompt=prompt, seed=seed)
    segments = None
    if segments_path:
        if segments_path.endswith(".json"):
            segments = SegmentSet.load_rle_json(segments_path)
        else:
            segments = SegmentSet.load_png16(segments_path)
    config = SynthConfig(aux_views=aux, optim=OptimConfig(steps=steps))
    index = synthesize_scale(scene, request, _provider_option(provider),
                             segments=segments, config=config)
    save_scene(scene, out_path)
    click.echo(f"{index}")


def _resolve_render_camera(scene, pose_path, layer, fx, width, height) -> Camera:
    if (pose_path is None) == (layer is None):
        raise click.UsageError("provide exactly one of --pose or --layer")
    if pose_path is not None:
        camera = _camera_from_pose_file(pose_path)
    else:
        snap = scene.snapshot()
        if not (0 <= layer < len(snap.layers)):
            raise click.UsageError(f"scene has no layer {layer}")
        camera = snap.layers[layer].creation_camera
    if fx is not None:
        camera = Camera(pose=camera.pose, fx=fx, fy=fx * camera.fy / camera.fx,
                        width=camera.width, height=camera.height,
                        cx=camera.cx, cy=camera.cy)
    if width is not None or height is not None:
        w = width or camera.width
        h = height or camera.height
        camera = Camera(pose=camera.pose, fx=camera.fx, fy=camera.fy,
                        width=w, height=h, cx=w / 2.0, cy=h / 2.0)
    return camera


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--pose", "pose_path", default=None, type=click.Path(exists=True))
@click.option("--layer", default=None, type=int)
@click.option("--fx", default=None, type=float)
@click.option("--width", default=None, type=int)
@click.option("--height", default=None, type=int)
@click.option("--no-modulation", is_flag=True, default=False)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--depth-out", default=None, type=click.Path())
def render(scene_path, pose_path, layer, fx, width, height, no_modulation,
           out_path, depth_out):
    """Render one frame from a pose file or a layer's creation camera."""
    scene = load_scene(scene_path)
    camera = _resolve_render_camera(scene, pose_path, layer, fx, width, height)
    config = RenderConfig(modulation=not no_modulation)
    frame, stats = render_with_stats(scene.snapshot(), camera, config)
    save_image(frame.color, out_path)
    if depth_out:
        frame.depth.save_bin(depth_out)
    click.echo(f"rendered {stats.composited_surfels} surfels to {out_path}")


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--from-layer", "from_layer", required=True, type=int)
@click.option("--to-layer", "to_layer", required=True, type=int)
@click.option("--frames", default=100, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def sweep(scene_path, from_layer, to_layer, frames, out_dir):
    """Render a focal-interpolated zoom sequence between two layers."""
    scene = load_scene(scene_path)
    snap = scene.snapshot()
    for idx in (from_layer, to_layer):
        if not (0 <= idx < len(snap.layers)):
            raise click.UsageError(f"scene has no layer {idx}")
    cams = sweep_cameras(snap.layers[from_layer].creation_camera,
                         snap.layers[to_layer].creation_camera, frames)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cams):
        frame, _ = render_with_stats(snap, cam, RenderConfig())
        save_image(frame.color, out / f"frame_{i:04d}.png")
    click.echo(f"wrote {frames} frames to {out_dir}")


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--provider", default=None)
@click.option("--steps", default=500, show_default=True, help="Synthesis optimization steps.")
@click.option("--aux", default=4, show_default=True, help="Auxiliary views per synthesis.")
def serve(scene_path, port, host, provider, steps, aux):
    """Serve the scene over the interactive wire protocol."""
    from .service import ServiceConfig, serve as run_service

    scene = load_scene(scene_path)
    config = ServiceConfig(synth=SynthConfig(aux_views=aux,
                                             optim=OptimConfig(steps=steps)))
    run_service(scene, port, _provider_option(provider), config=config, host=host)


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--poses", "poses_path", required=True, type=click.Path(exists=True))
@click.option("--repeat", default=3, show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def bench(scene_path, poses_path, repeat, as_json):
    """Compare render cost with modulation on vs off over a pose set."""
    scene = load_scene(scene_path)
    snap = scene.snapshot()
    with open(poses_path) as f:
        cameras = [Camera.from_json(d) for d in json.load(f)]
    results = []
    for mode, config in (("on", RenderConfig(modulation=True)),
                         ("off", RenderConfig(modulation=False))):
        surfels = 0
        pairs = 0
        start = time.perf_counter()
        for _ in range(repeat):
            for cam in cameras:
                _, stats = render_with_stats(snap, cam, config)
                surfels += stats.composited_surfels
                pairs += stats.composited_pairs
        elapsed = time.perf_counter() - start
        n_frames = repeat * len(cameras)
        results.append({
            "modulation": mode,
            "frames": n_frames,
            "fps": n_frames / elapsed if elapsed > 0 else float("inf"),
            "seconds": elapsed,
            "composited_surfels": surfels,
            "composited_pairs": pairs,
        })
    if as_json:
        click.echo(json.dumps(results))
    else:
        for row in results:
            click.echo(
                f"modulation {row['modulation']:>3}: {row['fps']:8.2f} fps, "
                f"{row['composited_surfels']} composited surfels, "
                f"{row['composited_pairs']} pixel contributions")


def main(argv=None) -> int:
    try:
        return_code = cli.main(args=argv, standalone_mode=False) or 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except USER_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception:  # internal error
        import traceback

        traceback.print_exc()
        return 2
    return return_code


if __name__ == "__main__":
    sys.exit(main())
