from .app import RenderService, ServiceConfig, create_app, serve
from .models import (CameraMessage, CommittedMessage, ErrorMessage,
                     LayersMessage, LayersReply, ZoomMessage,
                     pack_frame_header)

__all__ = [
    "RenderService", "ServiceConfig", "create_app", "serve",
    "CameraMessage", "CommittedMessage", "ErrorMessage", "LayersMessage",
    "LayersReply", "ZoomMessage", "pack_frame_header",
]
