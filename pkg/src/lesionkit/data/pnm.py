"""Binary PPM (P6) and PGM (P5) images with 8-bit samples."""
from __future__ import annotations

import os

import numpy as np

from ..exceptions import FormatError


def _tokens(buf: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError("truncated header")
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after header")
    return tokens, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """Decode a P5/P6 byte string into an H×W (P5) or H×W×3 (P6) uint8 array."""
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {buf[:2]!r}; expected P5 or P6")
    tokens, offset = _tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"non-numeric header fields {tokens[1:]}") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only 8-bit images (maxval 255) are supported, got {maxval}")
    channels = 3 if tokens[0] == b"P6" else 1
    expected = width * height * channels
    payload = buf[offset:offset + expected]
    if len(payload) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape).copy()


def encode(image) -> bytes:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise FormatError(f"only uint8 samples can be written, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def save_image(path, image) -> None:
    data = encode(image)
    with open(os.fspath(path), "wb") as fh:
        fh.write(data)


def load_mask(path) -> np.ndarray:
    """Boolean mask from a P5 file whose samples are exactly 0 or 255."""
    arr = load_image(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: masks must be single-channel (P5)")
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        value = int(arr[bad][0])
        raise FormatError(f"{path}: mask contains value {value}; only 0 and 255 are allowed")
    return arr == 255


def save_mask(path, mask) -> None:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise FormatError(f"mask must be 2-d, got shape {m.shape}")
    save_image(path, np.where(m, 255, 0).astype(np.uint8))
