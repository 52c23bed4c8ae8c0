"""Optical-flow quantization into 3-channel byte images.

A motion field (vx, vy) in pixels/frame is mapped to bytes with the
affine transform a*v + b, truncated to [0, 255].  The third channel
applies the same transform to the flow magnitude sqrt(vx^2 + vy^2).
Rounding is half-away-from-zero so the resulting bytes are identical
on every platform.
"""

from dataclasses import dataclass, field
from typing import BinaryIO, Union

import numpy as np

from poseact import binio
from poseact.errors import ValidationError

FLOW_MAGIC = "PFLW"
FLOW_VERSION = 1


@dataclass
class FlowField:
    """Per-pixel displacement field; vx and vy are (height, width) floats."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        self.vx = np.asarray(self.vx, dtype=np.float64)
        self.vy = np.asarray(self.vy, dtype=np.float64)
        if self.vx.ndim != 2 or self.vy.ndim != 2:
            raise ValidationError("flow planes must be 2-D")
        if self.vx.shape != self.vy.shape:
            raise ValidationError(
                f"vx shape {self.vx.shape} != vy shape {self.vy.shape}"
            )
        if self.vx.size == 0:
            raise ValidationError("flow field has zero pixels")

    @property
    def height(self) -> int:
        return self.vx.shape[0]

    @property
    def width(self) -> int:
        return self.vx.shape[1]

    @classmethod
    def zero(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))


@dataclass
class FlowQuantParams:
    """Affine byte mapping v -> a*v + b."""

    a: float = 16.0
    b: float = 128.0

    def __post_init__(self):
        if self.a == 0:
            raise ValidationError("scale a must be nonzero")


@dataclass
class QuantizedFlowImage:
    """(height, width, 3) uint8 raster: channels (vx, vy, magnitude)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValidationError("quantized flow image must be HxWx3")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round halves away from zero (np.round rounds halves to even)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_flow(
    flow: FlowField, params: FlowQuantParams = None
) -> QuantizedFlowImage:
    """Map a flow field to a 3-channel byte image.

    Channel 1 is round(a*vx + b), channel 2 round(a*vy + b), channel 3
    round(a*sqrt(vx^2 + vy^2) + b); all truncated to [0, 255].  The
    magnitude is computed on the raw flow before any truncation.
    """
    if params is None:
        params = FlowQuantParams()
    magnitude = np.sqrt(flow.vx**2 + flow.vy**2)
    channels = []
    for plane in (flow.vx, flow.vy, magnitude):
        mapped = round_half_away(params.a * plane + params.b)
        channels.append(np.clip(mapped, 0.0, 255.0))
    stacked = np.stack(channels, axis=-1).astype(np.uint8)
    return QuantizedFlowImage(stacked)


def write_flow(fh: Union[str, BinaryIO], flow: FlowField) -> None:
    """Write the PFLW container: magic, version, width, height, vx plane, vy plane."""
    if isinstance(fh, str):
        with open(fh, "wb") as out:
            write_flow(out, flow)
        return
    binio.write_magic(fh, FLOW_MAGIC)
    binio.write_u32(fh, FLOW_VERSION)
    binio.write_u32(fh, flow.width)
    binio.write_u32(fh, flow.height)
    binio.write_f32(fh, flow.vx.ravel())
    binio.write_f32(fh, flow.vy.ravel())


def read_flow(fh: Union[str, BinaryIO]) -> FlowField:
    if isinstance(fh, str):
        with open(fh, "rb") as inp:
            return read_flow(inp)
    binio.read_magic(fh, FLOW_MAGIC)
    version = binio.read_u32(fh)
    if version != FLOW_VERSION:
        raise ValidationError(f"unsupported flow container version {version}")
    width = binio.read_u32(fh)
    height = binio.read_u32(fh)
    if width == 0 or height == 0:
        raise ValidationError("flow container declares zero dimensions")
    vx = binio.read_f32(fh, width * height).reshape(height, width)
    vy = binio.read_f32(fh, width * height).reshape(height, width)
    return FlowField(vx, vy)


def save_flow_image(path: str, image: QuantizedFlowImage) -> None:
    """Save as lossless PNG (the raster format the toolkit standardizes on)."""
    from PIL import Image

    Image.fromarray(image.data, mode="RGB").save(path, format="PNG")


def load_flow_image(path: str) -> QuantizedFlowImage:
    from PIL import Image

    with Image.open(path) as img:
        return QuantizedFlowImage(np.asarray(img.convert("RGB")))
