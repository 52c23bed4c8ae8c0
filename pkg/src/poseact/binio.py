"""Low-level helpers for the binary container formats.

All containers share the same conventions: 4-byte ASCII magic, u32
little-endian header fields, float32 little-endian payloads, and
length-prefixed UTF-8 strings (u32 length).
"""

import struct
from typing import BinaryIO

import numpy as np

from poseact.errors import FormatError


def write_magic(fh: BinaryIO, magic: str) -> None:
    fh.write(magic.encode("ascii"))


def read_magic(fh: BinaryIO, expected: str) -> None:
    raw = fh.read(4)
    if raw != expected.encode("ascii"):
        raise FormatError(f"bad magic {raw!r}, expected {expected!r}")


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh: BinaryIO) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("truncated container: expected u32")
    return struct.unpack("<I", raw)[0]


def write_u8(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<B", value))


def read_u8(fh: BinaryIO) -> int:
    raw = fh.read(1)
    if len(raw) != 1:
        raise FormatError("truncated container: expected u8")
    return struct.unpack("<B", raw)[0]


def write_str(fh: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    write_u32(fh, len(data))
    fh.write(data)


def read_str(fh: BinaryIO) -> str:
    length = read_u32(fh)
    raw = fh.read(length)
    if len(raw) != length:
        raise FormatError("truncated container: short string")
    return raw.decode("utf-8")


def write_f32(fh: BinaryIO, values: np.ndarray) -> None:
    fh.write(np.asarray(values, dtype="<f4").tobytes())


def read_f32(fh: BinaryIO, count: int) -> np.ndarray:
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError("truncated container: short float payload")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)
