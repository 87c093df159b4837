"""Image containers: binary PPM (P6, 8-bit) for color, PGM (P5, 16-bit) for
previews, and the raw float32 "EIGF1" format for scalar fields.

EIGF1 layout, little endian: magic b"EIGF1", width u32, height u32, then
height*width row-major float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

EIGF_MAGIC = b"EIGF1"


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as binary PPM."""
    h, w, _ = image.shape
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, offset = _read_header_fields(raw, b"P6", 3, path)
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: unsupported PPM maxval {maxval}", offset)
    need = w * h * 3
    if len(raw) - offset < need:
        raise ParseError(f"{path}: truncated PPM pixel data", len(raw))
    data = np.frombuffer(raw, np.uint8, count=need, offset=offset)
    return data.reshape(h, w, 3).astype(float) / 255.0


def write_pgm16(path, image: np.ndarray) -> None:
    """Write an (H, W) float image in [0, 1] as 16-bit binary PGM
    (big-endian sample bytes, per the format)."""
    h, w = image.shape
    data = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(data.tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, offset = _read_header_fields(raw, b"P5", 3, path)
    w, h, maxval = fields
    if maxval != 65535:
        raise ParseError(f"{path}: unsupported PGM maxval {maxval}", offset)
    need = w * h * 2
    if len(raw) - offset < need:
        raise ParseError(f"{path}: truncated PGM pixel data", len(raw))
    data = np.frombuffer(raw, ">u2", count=w * h, offset=offset)
    return data.reshape(h, w).astype(float) / 65535.0


def _read_header_fields(raw: bytes, magic: bytes, count: int, path):
    """Parse a NetPBM-style header: magic then ``count`` whitespace-separated
    integers ('#' comments allowed), returning (fields, data offset)."""
    if not raw.startswith(magic):
        raise ParseError(f"{path}: bad magic, expected {magic.decode()}", 0)
    pos = len(magic)
    fields = []
    while len(fields) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated header", pos)
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise ParseError(
                f"{path}: bad header field {raw[start:pos]!r}", start
            ) from None
    return fields, pos + 1  # single whitespace after the last field


def write_eigf(path, field: np.ndarray) -> None:
    """Write an (H, W) scalar field as raw float32."""
    h, w = field.shape
    with open(path, "wb") as f:
        f.write(EIGF_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(field.astype("<f4").tobytes())


def read_eigf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(EIGF_MAGIC):
        raise ParseError(f"{path}: bad magic, expected EIGF1", 0)
    if len(raw) < len(EIGF_MAGIC) + 8:
        raise ParseError(f"{path}: truncated EIGF1 header", len(raw))
    w, h = struct.unpack_from("<II", raw, len(EIGF_MAGIC))
    offset = len(EIGF_MAGIC) + 8
    need = w * h * 4
    if len(raw) - offset < need:
        raise ParseError(f"{path}: truncated EIGF1 data", len(raw))
    data = np.frombuffer(raw, "<f4", count=w * h, offset=offset)
    return data.reshape(h, w).astype(float)
