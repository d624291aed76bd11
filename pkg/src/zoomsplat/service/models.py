"""Pydantic models for the wire protocol.

Clients speak JSON text frames; the server answers with JSON text frames
plus binary image frames (16-byte header: frame id u32, scene version u32,
width u32, height u32, little-endian, followed by the encoded image).
"""

from __future__ import annotations

import struct
from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, TypeAdapter

FRAME_HEADER = struct.Struct("<IIII")


class CameraMessage(BaseModel):
    type: Literal["camera"]
    pose: list[float] = Field(min_length=16, max_length=16)  # row-major 4x4
    fx: float
    fy: float
    cx: float | None = None
    cy: float | None = None
    w: int
    h: int


class ZoomMessage(BaseModel):
    type: Literal["zoom"]
    layer: int
    center: tuple[float, float]
    factor: float = 8.0
    prompt: str = ""
    seed: int = 0


class LayersMessage(BaseModel):
    type: Literal["layers"]


ClientMessage = Annotated[Union[CameraMessage, ZoomMessage, LayersMessage],
                          Field(discriminator="type")]
CLIENT_MESSAGE = TypeAdapter(ClientMessage)


class CommittedMessage(BaseModel):
    type: Literal["committed"] = "committed"
    layer: int
    version: int


class ErrorMessage(BaseModel):
    type: Literal["error"] = "error"
    code: str
    msg: str


class LayersReply(BaseModel):
    type: Literal["layers"] = "layers"
    manifest: dict


def pack_frame_header(frame_id: int, version: int, width: int, height: int) -> bytes:
    return FRAME_HEADER.pack(frame_id & 0xFFFFFFFF, version & 0xFFFFFFFF,
                             width, height)
