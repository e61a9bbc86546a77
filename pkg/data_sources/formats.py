"""Binary tensor and image formats.

TNSR: b"TNSR", u32 version (=1), u32 rank, rank x u32 dims, row-major
little-endian float32 payload.
PGM: binary P5, maxval 255.
PFM: single channel "Pf", negative scale (little-endian), rows stored bottom-up.
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List

import numpy as np

from errors import FormatError, IoError

logger = logging.getLogger(__name__)

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
_F32_LE = np.dtype("<f4")


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def write_tnsr(path: Path, array) -> Path:
    arr = np.ascontiguousarray(array, dtype=_F32_LE)
    header = TNSR_MAGIC + struct.pack(f"<II{arr.ndim}I", TNSR_VERSION, arr.ndim, *arr.shape)
    _write_bytes(path, header + arr.tobytes())
    logger.debug(f"Wrote TNSR {arr.shape} to {path}")
    return Path(path)


def read_tnsr(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 12 or data[:4] != TNSR_MAGIC:
        raise FormatError(f"{path} is not a TNSR file")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != TNSR_VERSION:
        raise FormatError(f"{path}: unsupported TNSR version {version}")
    offset = 12 + 4 * rank
    if len(data) < offset:
        raise FormatError(f"{path}: truncated TNSR header")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) - offset != 4 * count:
        raise FormatError(f"{path}: payload has {len(data) - offset} bytes, expected {4 * count} for dims {dims}")
    return np.frombuffer(data, dtype=_F32_LE, count=count, offset=offset).reshape(dims).astype(np.float32)


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Whitespace-separated header tokens (with '#' comments) and the payload offset."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("truncated image header")
        tokens.append(data[start:i])
    return tokens, i + 1  # exactly one whitespace byte before the payload


def to_gray8(values) -> np.ndarray:
    """[0, 1] reals to 8-bit gray levels."""
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: Path, gray) -> Path:
    img = np.asarray(gray)
    if img.dtype != np.uint8:
        img = to_gray8(img)
    if img.ndim != 2:
        raise FormatError(f"PGM needs a 2D image, got shape {img.shape}")
    h, w = img.shape
    _write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes())
    return Path(path)


def read_pgm(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if data[:2] != b"P5":
        raise FormatError(f"{path} is not a binary PGM (P5)")
    try:
        (_, w, h, maxval), offset = _header_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, FormatError) as e:
        raise FormatError(f"{path}: bad PGM header: {e}") from e
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if len(data) - offset != w * h:
        raise FormatError(f"{path}: payload has {len(data) - offset} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(h, w).copy()


def write_pfm(path: Path, values) -> Path:
    img = np.asarray(values, dtype=_F32_LE)
    if img.ndim != 2:
        raise FormatError(f"PFM writer handles single-channel maps, got shape {img.shape}")
    h, w = img.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    _write_bytes(path, header + np.ascontiguousarray(np.flipud(img)).tobytes())
    return Path(path)


def read_pfm(path: Path) -> np.ndarray:
    data = _read_bytes(path)
    if data[:2] != b"Pf":
        raise FormatError(f"{path} is not a single-channel PFM")
    try:
        (_, w, h, scale), offset = _header_tokens(data, 4)
        w, h, scale = int(w), int(h), float(scale)
    except (ValueError, FormatError) as e:
        raise FormatError(f"{path}: bad PFM header: {e}") from e
    dtype = _F32_LE if scale < 0 else np.dtype(">f4")
    if len(data) - offset != 4 * w * h:
        raise FormatError(f"{path}: payload has {len(data) - offset} bytes, expected {4 * w * h}")
    img = np.frombuffer(data, dtype=dtype, offset=offset).reshape(h, w)
    return np.flipud(img).astype(np.float32)


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> Path:
    lines = "".join(json.dumps(r) + "\n" for r in records)
    _write_bytes(path, lines.encode("utf-8"))
    return Path(path)


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    text = _read_bytes(path).decode("utf-8")
    try:
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: bad JSONL: {e}") from e
