"""Multi-scale Gaussian surfel engine.

A scene is a growing hierarchy of scale layers rendered in real time with
scale-aware opacity modulation; an interactive zoom loop synthesizes new
finer-scale layers via pluggable detail providers and registers them to the
existing geometry.
"""

from .geometry import Camera, DepthMap, back_project, identity_camera, project
from .modulation import ScaleBounds, native_scale, opacity_weight, render_scale
from .rasterizer import Frame, RenderConfig, render_color, render_depth
from .scene import MultiScaleScene, ScaleLayer, SceneSnapshot, Surfel
from .sceneio import load_scene, save_scene
from .surfelize import pixel_aligned_surfels
from .synth import (DetailProvider, DetailRequest, ProceduralProvider,
                    StubProvider, SynthConfig, synthesize_scale, zoom_camera)

__version__ = "0.1.0"

__all__ = [
    "Camera", "DepthMap", "back_project", "identity_camera", "project",
    "ScaleBounds", "native_scale", "opacity_weight", "render_scale",
    "Frame", "RenderConfig", "render_color", "render_depth",
    "MultiScaleScene", "ScaleLayer", "SceneSnapshot", "Surfel",
    "load_scene", "save_scene", "pixel_aligned_surfels",
    "DetailProvider", "DetailRequest", "ProceduralProvider", "StubProvider",
    "SynthConfig", "synthesize_scale", "zoom_camera",
]
