"""Minimal PNG reader/writer for 8-bit RGB rasters.

Writing always produces 8-bit RGB, non-interlaced, filter type 0 on every
row and a fixed zlib level, so identical pixels give identical bytes.

Reading accepts non-interlaced grayscale, gray+alpha, RGB and RGBA at bit
depth 8 or 16 and converts to 8-bit RGB:

* 16-bit samples map to 8 bits as ``(v * 255 + 32767) // 65535``
  (round to nearest);
* gray is replicated into R, G and B;
* alpha is dropped without compositing.

Palette images, bit depths below 8 and Adam7 interlacing raise
:class:`RasterFormatError`.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import RasterFormatError, TruncatedRasterError

SIGNATURE = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(data, zlib.crc32(kind)))


def encode_png(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise RasterFormatError(f"expected H x W x 3 uint8 image, got {img.dtype} {img.shape}")
    h, w, _ = img.shape
    rows = np.concatenate([np.zeros((h, 1), np.uint8), img.reshape(h, w * 3)], axis=1)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(rows.tobytes(), 6)) + _chunk(b"IEND", b"")


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    if len(raw) < h * (stride + 1):
        raise TruncatedRasterError("image data shorter than declared dimensions")
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(h):
        start = y * (stride + 1)
        ftype = raw[start]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=start + 1).copy()
        if ftype == 0:
            pass
        elif ftype == 1:
            for x in range(bpp, stride):
                line[x] = (int(line[x]) + int(line[x - bpp])) & 0xFF
        elif ftype == 2:
            line = (line.astype(np.uint16) + prev).astype(np.uint8)
        elif ftype == 3:
            for x in range(stride):
                left = int(line[x - bpp]) if x >= bpp else 0
                line[x] = (int(line[x]) + ((left + int(prev[x])) >> 1)) & 0xFF
        elif ftype == 4:
            for x in range(stride):
                left = int(line[x - bpp]) if x >= bpp else 0
                upleft = int(prev[x - bpp]) if x >= bpp else 0
                line[x] = (int(line[x]) + _paeth(left, int(prev[x]), upleft)) & 0xFF
        else:
            raise RasterFormatError(f"unknown PNG filter type {ftype}")
        out[y] = line
        prev = line
    return out


def decode_png(blob: bytes) -> np.ndarray:
    if blob[:8] != SIGNATURE:
        raise RasterFormatError("not a PNG file")
    pos = 8
    header = None
    idat = []
    ended = False
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise TruncatedRasterError("truncated chunk header")
        length, kind = struct.unpack_from(">I4s", blob, pos)
        if pos + 12 + length > len(blob):
            raise TruncatedRasterError(f"truncated {kind!r} chunk")
        data = blob[pos + 8: pos + 8 + length]
        (crc,) = struct.unpack_from(">I", blob, pos + 8 + length)
        if crc != zlib.crc32(data, zlib.crc32(kind)):
            raise RasterFormatError(f"CRC mismatch in {kind!r} chunk")
        pos += 12 + length
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", data)
        elif kind == b"IDAT":
            idat.append(data)
        elif kind == b"IEND":
            ended = True
            break
    if header is None:
        raise RasterFormatError("missing IHDR chunk")
    if not ended:
        raise TruncatedRasterError("missing IEND chunk")
    w, h, depth, color, _, _, interlace = header
    if color not in _CHANNELS:
        raise RasterFormatError(f"unsupported PNG color type {color}")
    if depth not in (8, 16):
        raise RasterFormatError(f"unsupported bit depth {depth}")
    if interlace:
        raise RasterFormatError("interlaced PNG not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise TruncatedRasterError(f"corrupt image data: {exc}") from None
    channels = _CHANNELS[color]
    bpp = channels * depth // 8
    rows = _unfilter(raw, h, w * bpp, bpp)
    if depth == 16:
        samples = rows.reshape(h, w * channels, 2).astype(np.uint32)
        wide = (samples[..., 0] << 8) | samples[..., 1]
        pix = ((wide * 255 + 32767) // 65535).astype(np.uint8).reshape(h, w, channels)
    else:
        pix = rows.reshape(h, w, channels)
    if channels in (1, 2):
        pix = np.repeat(pix[..., :1], 3, axis=2)
    return np.ascontiguousarray(pix[..., :3])


def save_raster(img: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(img))


def load_raster(path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())
