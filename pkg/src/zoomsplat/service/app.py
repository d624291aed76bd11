"""Interactive render service: real-time rendering racing slow synthesis.

One WebSocket session per client. Camera messages coalesce to the latest
pending pose and each session has at most one render in flight; frames are
rendered from scene snapshots, so clients never observe a partially
committed layer. Zoom messages feed a global single-worker synthesis queue
(at most one job pending); commits are broadcast to every session and
rendering switches to the new snapshot on the next frame.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field

import anyio
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import Response
from pydantic import ValidationError

from ..geometry import Camera, GeometryError
from ..images import encode_png
from ..rasterizer import RenderConfig, render_with_stats
from ..scene import MultiScaleScene
from ..sceneio import scene_manifest
from ..synth import DetailProvider, DetailRequest, SynthConfig, synthesize_scale
from .models import (CLIENT_MESSAGE, CameraMessage, CommittedMessage,
                     ErrorMessage, LayersMessage, LayersReply, ZoomMessage,
                     pack_frame_header)


@dataclass
class ServiceConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    frame_format: str = "png"  # "jpeg" trades losslessness for throughput
    jpeg_quality: int = 90


class _Session:
    def __init__(self, ws: WebSocket):
        self.ws = ws
        self.latest_camera: Camera | None = None
        self.camera_ready = asyncio.Event()
        self.send_lock = asyncio.Lock()
        self.frame_id = 0

    async def send_json(self, model) -> None:
        async with self.send_lock:
            await self.ws.send_text(model.model_dump_json())

    async def send_frame(self, header: bytes, payload: bytes) -> None:
        async with self.send_lock:
            await self.ws.send_bytes(header + payload)


class RenderService:
    def __init__(self, scene: MultiScaleScene, provider: DetailProvider,
                 config: ServiceConfig = None):
        self.scene = scene
        self.provider = provider
        self.config = config or ServiceConfig()
        self.sessions: set[_Session] = set()
        self.synthesis_pending = False

    def _encode(self, color) -> bytes:
        if self.config.frame_format == "jpeg":
            import io

            import numpy as np
            from PIL import Image

            buf = io.BytesIO()
            arr = (np.clip(color, 0, 1) * 255 + 0.5).astype("uint8")
            Image.fromarray(arr, mode="RGB").save(buf, format="JPEG",
                                                  quality=self.config.jpeg_quality)
            return buf.getvalue()
        return encode_png(color)

    async def render_loop(self, session: _Session) -> None:
        while True:
            await session.camera_ready.wait()
            session.camera_ready.clear()
            camera = session.latest_camera
            if camera is None:
                continue
            snapshot = self.scene.snapshot()
            frame, _ = await anyio.to_thread.run_sync(
                render_with_stats, snapshot, camera, self.config.render)
            payload = await anyio.to_thread.run_sync(self._encode, frame.color)
            header = pack_frame_header(session.frame_id, snapshot.version,
                                       camera.width, camera.height)
            await session.send_frame(header, payload)
            session.frame_id += 1

    async def handle_zoom(self, session: _Session, msg: ZoomMessage) -> None:
        if self.synthesis_pending:
            await session.send_json(ErrorMessage(
                code="busy", msg="a synthesis job is already pending"))
            return
        self.synthesis_pending = True
        request = DetailRequest(parent_layer=msg.layer,
                                zoom_center=tuple(msg.center),
                                zoom_factor=msg.factor, prompt=msg.prompt,
                                seed=msg.seed)

        async def run():
            try:
                index = await anyio.to_thread.run_sync(
                    synthesize_scale, self.scene, request, self.provider,
                    None, self.config.synth)
            except Exception as exc:  # deliberately broad: job must not kill the app
                note = ErrorMessage(code="synthesis_failed", msg=str(exc))
                for s in list(self.sessions):
                    try:
                        await s.send_json(note)
                    except Exception:
                        pass
            else:
                note = CommittedMessage(layer=index, version=self.scene.version)
                for s in list(self.sessions):
                    try:
                        await s.send_json(note)
                    except Exception:
                        pass
            finally:
                self.synthesis_pending = False

        # runs to completion even if the requesting client disconnects
        asyncio.get_running_loop().create_task(run())

    async def handle_message(self, session: _Session, raw: str) -> None:
        try:
            msg = CLIENT_MESSAGE.validate_json(raw)
        except ValidationError as exc:
            await session.send_json(ErrorMessage(
                code="bad_message", msg=exc.errors()[0].get("msg", "invalid message")))
            return
        if isinstance(msg, CameraMessage):
            try:
                session.latest_camera = Camera.from_json(msg.model_dump())
            except GeometryError as exc:
                await session.send_json(ErrorMessage(code="bad_camera", msg=str(exc)))
                return
            session.camera_ready.set()
        elif isinstance(msg, LayersMessage):
            await session.send_json(LayersReply(manifest=scene_manifest(self.scene)))
        elif isinstance(msg, ZoomMessage):
            await self.handle_zoom(session, msg)


def create_app(scene: MultiScaleScene, provider: DetailProvider,
               config: ServiceConfig = None) -> FastAPI:
    service = RenderService(scene, provider, config)
    app = FastAPI(title="zoomsplat render service")
    app.state.service = service

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "version": service.scene.version}

    @app.get("/layers")
    def layers() -> dict:
        return scene_manifest(service.scene)

    @app.post("/render")
    def render_once(msg: CameraMessage) -> Response:
        camera = Camera.from_json(msg.model_dump())
        frame, _ = render_with_stats(service.scene.snapshot(), camera,
                                     service.config.render)
        return Response(content=encode_png(frame.color), media_type="image/png")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        session = _Session(ws)
        service.sessions.add(session)
        renderer = asyncio.get_running_loop().create_task(
            service.render_loop(session))
        try:
            while True:
                raw = await ws.receive_text()
                await service.handle_message(session, raw)
        except WebSocketDisconnect:
            pass
        finally:
            renderer.cancel()
            service.sessions.discard(session)

    return app


def serve(scene: MultiScaleScene, port: int, provider: DetailProvider,
          config: ServiceConfig = None, host: str = "127.0.0.1") -> None:
    """Run the service until shutdown (blocking)."""
    import uvicorn

    app = create_app(scene, provider, config)
    uvicorn.run(app, host=host, port=port, log_level="warning")
