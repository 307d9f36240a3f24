"""Binary PPM (P6) and PGM (P5) reading and writing.

Only the raw binary variants are supported. ``maxval`` up to 255 uses one
byte per sample; larger values use two big-endian bytes, as the format
prescribes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import PnmParseError

_WS = b" \t\n\r\x0b\x0c"


def _token(buf, pos):
    """Read one header token, skipping whitespace and ``#`` comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch in (b"#",):
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch and ch in _WS:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WS and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PnmParseError("unexpected end of header", start)
    return buf[start:pos], pos


def _int_token(buf, pos, what):
    tok, end = _token(buf, pos)
    if not tok.isdigit():
        raise PnmParseError(f"expected {what}, found {tok[:16]!r}", end - len(tok))
    return int(tok), end


def decode(buf: bytes) -> np.ndarray:
    """Decode a P5/P6 byte string to ``(h, w)`` or ``(h, w, 3)`` integers."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise PnmParseError(f"bad magic {buf[:2]!r}, expected P5 or P6", 0)
    channels = 3 if buf[:2] == b"P6" else 1
    pos = 2
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise PnmParseError("missing whitespace after magic", pos)
    width, pos = _int_token(buf, pos, "width")
    height, pos = _int_token(buf, pos, "height")
    maxval_at = pos
    maxval, pos = _int_token(buf, pos, "maxval")
    if not 0 < maxval < 65536:
        tok, _ = _token(buf, maxval_at)
        raise PnmParseError(f"maxval {maxval} outside 1..65535", pos - len(tok))
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise PnmParseError("missing single whitespace before raster", pos)
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    avail = len(buf) - pos
    if avail < need:
        raise PnmParseError(f"truncated raster: need {need} bytes, have {avail}", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8)


def encode(arr: np.ndarray, maxval: int = 255) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"expected (h, w) or (h, w, 3) array, got {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise ValueError(f"sample values must lie in 0..{maxval}")
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    return header + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path, arr, maxval=255) -> None:
    Path(path).write_bytes(encode(arr, maxval))
