"""Tensor container and media export.

One tensor per ``.tns`` file: 8 magic bytes ``OIETNS01``, a little-endian
u32 rank, ``rank`` little-endian u32 dims, then the row-major float32
payload. Everything this package persists (datasets, checkpoints, sampled
videos) goes through here, so byte-identical rebuilds reduce to writing the
same floats in the same order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"OIETNS01"

_HEADER = struct.Struct("<I")


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Serialize ``array`` as float32. Row-major order is enforced."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    payload = bytearray()
    payload += MAGIC
    payload += _HEADER.pack(arr.ndim)
    for dim in arr.shape:
        payload += _HEADER.pack(dim)
    payload += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(payload))


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"tensor file missing: {path}") from exc
    if len(blob) < len(MAGIC) + 4:
        raise FormatError(f"{path}: truncated header")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {MAGIC!r}")
    offset = len(MAGIC)
    (rank,) = _HEADER.unpack_from(blob, offset)
    offset += 4
    if rank > 8:
        raise FormatError(f"{path}: implausible rank {rank}")
    if len(blob) < offset + 4 * rank:
        raise FormatError(f"{path}: truncated dims")
    dims = []
    for _ in range(rank):
        (d,) = _HEADER.unpack_from(blob, offset)
        offset += 4
        dims.append(d)
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    expected = offset + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size {len(blob) - offset} bytes, expected {4 * count}"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return flat.reshape(dims).astype(np.float32, copy=True)


def payload_elements(path: str | Path) -> int:
    """Element count straight from the header (independent of np.prod above)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 4)
        if head[: len(MAGIC)] != MAGIC:
            raise FormatError(f"{path}: bad magic")
        (rank,) = _HEADER.unpack_from(head, len(MAGIC))
        total = 1
        for _ in range(rank):
            (d,) = _HEADER.unpack_from(fh.read(4), 0)
            total *= d
    return total


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """Media quantization: round(255 * clamp(v, 0, 1)), value-exact contract."""
    clipped = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * clipped).astype(np.uint8)


def write_pgm(path: str | Path, frame: np.ndarray) -> None:
    """Binary PGM (P5) for a single-channel (H, W) frame in [0, 1]."""
    frame = np.asarray(frame)
    if frame.ndim == 3 and frame.shape[0] == 1:
        frame = frame[0]
    if frame.ndim != 2:
        raise ValueError(f"PGM wants (H, W), got {frame.shape}")
    data = to_uint8(frame)
    header = f"P5\n{frame.shape[1]} {frame.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    """Binary PPM (P6) for a (3, H, W) frame in [0, 1]."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"PPM wants (3, H, W), got {frame.shape}")
    data = to_uint8(np.moveaxis(frame, 0, -1))  # (H, W, 3)
    header = f"P6\n{frame.shape[2]} {frame.shape[1]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def export_frames(directory: str | Path, video: np.ndarray, stem: str = "frame") -> list[Path]:
    """Dump a (F, C, H, W) video as numbered PGM/PPM frames for inspection."""
    video = np.asarray(video)
    if video.ndim != 4:
        raise ValueError(f"expected (F, C, H, W), got {video.shape}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, frame in enumerate(video):
        if frame.shape[0] == 3:
            out = directory / f"{stem}_{i:04d}.ppm"
            write_ppm(out, frame)
        else:
            out = directory / f"{stem}_{i:04d}.pgm"
            write_pgm(out, frame)
        written.append(out)
    return written
