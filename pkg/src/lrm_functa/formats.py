"""Binary file formats: LRMV videos, LRML latent codes, LRMC checkpoints.

All integers are little-endian u32 (u64 where noted), all arrays
little-endian f64.

LRMV  magic "LRMV" | version | T | H | W | T*H*W values | crc32 of everything before
LRML  magic "LRML" | q | k | T | v (q values) | phi (T*k values, row-major)
LRMC  magic "LRMC" | version | hidden_width | hidden_layers | q | in_dim | out_dim
      | k | omega0 (f64) | slice count | per slice: name length, utf-8 name,
      ndim, dims | value count (u64) | values | metadata length | JSON metadata
      | crc32 of everything before
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lowrank import LatentCodes
from .model import BackboneConfig
from .numerics import ParamStore

VIDEO_MAGIC = b"LRMV"
LATENT_MAGIC = b"LRML"
CHECKPOINT_MAGIC = b"LRMC"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed file."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def atomic_write(path, payload: bytes) -> None:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.path}: file ends early (need {n} bytes at offset {self.pos})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count: int = 1) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def _magic(reader: _Reader, magic: bytes) -> None:
    got = reader.take(4)
    if got != magic:
        raise BadMagicError(f"{reader.path}: expected magic {magic!r}, found {got!r}")


def _check_crc(buf: bytes, path) -> bytes:
    if len(buf) < 4:
        raise TruncatedFileError(f"{path}: file too short")
    body, (stored,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != stored:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    return body


def encode_video(video: np.ndarray) -> bytes:
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 3:
        raise ValueError(f"video must be T x H x W, got shape {video.shape}")
    body = VIDEO_MAGIC + struct.pack("<4I", FORMAT_VERSION, *video.shape)
    body += np.ascontiguousarray(video, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_video(buf: bytes, path="<bytes>") -> np.ndarray:
    reader = _Reader(buf, path)
    _magic(reader, VIDEO_MAGIC)
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported LRMV version {version}")
    t, h, w = reader.u32(), reader.u32(), reader.u32()
    reader.take(8 * t * h * w + 4)
    if reader.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - reader.pos} trailing bytes")
    _check_crc(buf, path)
    return np.frombuffer(buf[20:20 + 8 * t * h * w], dtype="<f8").astype(np.float64).reshape(t, h, w)


def write_video(path, video: np.ndarray) -> None:
    atomic_write(path, encode_video(video))


def read_video(path) -> np.ndarray:
    return decode_video(Path(path).read_bytes(), path)


def encode_latents(codes: LatentCodes) -> bytes:
    head = LATENT_MAGIC + struct.pack("<3I", codes.q, codes.k, codes.frames)
    return (head + np.ascontiguousarray(codes.v, dtype="<f8").tobytes()
            + np.ascontiguousarray(codes.phi, dtype="<f8").tobytes())


def decode_latents(buf: bytes, path="<bytes>") -> LatentCodes:
    reader = _Reader(buf, path)
    _magic(reader, LATENT_MAGIC)
    q, k, t = reader.u32(), reader.u32(), reader.u32()
    v = reader.f64(q)
    phi = reader.f64(t * k).reshape(t, k)
    if reader.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - reader.pos} trailing bytes")
    return LatentCodes(v, phi)


def write_latents(path, codes: LatentCodes) -> None:
    atomic_write(path, encode_latents(codes))


def read_latents(path) -> LatentCodes:
    return decode_latents(Path(path).read_bytes(), path)


@dataclass
class Checkpoint:
    """Shared parameters (backbone slices plus ``beta``) and training metadata."""

    config: BackboneConfig
    k: int
    params: ParamStore
    meta: dict = field(default_factory=dict)

    @property
    def basis(self) -> np.ndarray:
        return self.params["beta"]


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    parts = [CHECKPOINT_MAGIC, struct.pack("<7I", FORMAT_VERSION, cfg.hidden_width, cfg.hidden_layers,
                                           cfg.q, cfg.in_dim, cfg.out_dim, ckpt.k),
             struct.pack("<d", cfg.omega0), struct.pack("<I", len(ckpt.params.layout))]
    for name, (_, _, shape) in ckpt.params.layout.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
    parts.append(struct.pack("<Q", ckpt.params.size))
    parts.append(np.ascontiguousarray(ckpt.params.data, dtype="<f8").tobytes())
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(buf: bytes, path="<bytes>") -> Checkpoint:
    reader = _Reader(buf, path)
    _magic(reader, CHECKPOINT_MAGIC)
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported LRMC version {version}")
    width, layers, q, in_dim, out_dim, k = (reader.u32() for _ in range(6))
    omega0 = float(reader.f64()[0])
    shapes = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shapes[name] = tuple(reader.u32() for _ in range(ndim))
    store = ParamStore(shapes)
    count = reader.u64()
    if count != store.size:
        raise FormatError(f"{path}: manifest describes {store.size} values, header says {count}")
    store.data[:] = reader.f64(count)
    meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    reader.take(4)
    if reader.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - reader.pos} trailing bytes")
    _check_crc(buf, path)
    cfg = BackboneConfig(hidden_width=width, hidden_layers=layers, omega0=omega0, q=q,
                         in_dim=in_dim, out_dim=out_dim)
    return Checkpoint(cfg, k, store, meta)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def read_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), path)
