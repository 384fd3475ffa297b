"""Binary checkpoint container for trained models.

Layout (little-endian, documented byte-for-byte in docs/checkpoint.md):
magic, format version, model kind, config JSON, codec version string,
named parameter blobs with dtype and shape, CRC32 trailer over everything
before it. Loading restores every array bit-exactly.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigMismatch, CorruptCheckpoint, IoFailure
from .transformer import TransformerConfig, TransformerModel

MAGIC = b"PSCKPT01"
FORMAT_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def write_checkpoint(path: str | Path, kind: str, config: dict, codec_version: str,
                     arrays: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    parts.append(_pack_str(kind))
    parts.append(_pack_str(json.dumps(config, sort_keys=True, separators=(",", ":"))))
    parts.append(_pack_str(codec_version))
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        parts.append(_pack_str(name))
        parts.append(_pack_str(arr.dtype.str))
        parts.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<Q", dim))
        raw = arr.tobytes()
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    body = b"".join(parts)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    try:
        Path(path).write_bytes(body + struct.pack("<I", crc))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint to {path}: {exc}") from None


def read_checkpoint(path: str | Path) -> tuple[str, dict, str, dict[str, np.ndarray]]:
    """Returns (kind, config dict, codec_version, arrays)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint from {path}: {exc}") from None
    if len(blob) < len(MAGIC) + 2 + 4 or blob[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    body, crc_raw = blob[:-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_raw)[0]:
        raise CorruptCheckpoint(f"{path}: CRC mismatch (file damaged or truncated)")
    r = _Reader(body)
    r.take(len(MAGIC))
    version = struct.unpack("<H", r.take(2))[0]
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {version}")
    kind = r.string()
    config = json.loads(r.string())
    codec_version = r.string()
    count = r.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string()
        dtype = np.dtype(r.string())
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = tuple(r.u64() for _ in range(ndim))
        nbytes = r.u64()
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if nbytes != expected:
            raise CorruptCheckpoint(f"{path}: parameter {name} has inconsistent size")
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    if r.pos != len(body):
        raise CorruptCheckpoint(f"{path}: trailing bytes after parameters")
    return kind, config, codec_version, arrays


def save_model(model: TransformerModel, path: str | Path, codec_version: str,
               optimizer_arrays: dict[str, np.ndarray] | None = None) -> None:
    from dataclasses import asdict

    arrays = dict(model.weight_arrays())
    if optimizer_arrays:
        for key, value in optimizer_arrays.items():
            arrays["opt." + key] = value
    write_checkpoint(path, "transformer", asdict(model.cfg), codec_version, arrays)


def load_model(path: str | Path, expected_codec_version: str | None = None,
               expected_input_dim: int | None = None) -> tuple[TransformerModel, str]:
    kind, config, codec_version, arrays = read_checkpoint(path)
    if kind != "transformer":
        raise ConfigMismatch(f"{path}: checkpoint holds a {kind}, not a transformer")
    cfg = TransformerConfig(**config)
    if expected_codec_version is not None and codec_version != expected_codec_version:
        raise ConfigMismatch(
            f"{path}: checkpoint codec {codec_version} != expected {expected_codec_version}")
    if expected_input_dim is not None and cfg.input_dim != expected_input_dim:
        raise ConfigMismatch(
            f"{path}: checkpoint input_dim {cfg.input_dim} != expected {expected_input_dim}")
    weights = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    return TransformerModel.from_arrays(cfg, weights), codec_version


def save_autoencoder(ae, path: str | Path) -> None:
    config = ae.get_params()
    write_checkpoint(path, "autoencoder", config, "", ae.weight_arrays())


def load_autoencoder(path: str | Path):
    from .cmdline import CmdlineAutoencoder

    kind, config, _, arrays = read_checkpoint(path)
    if kind != "autoencoder":
        raise ConfigMismatch(f"{path}: checkpoint holds a {kind}, not an autoencoder")
    ae = CmdlineAutoencoder(**config)
    return ae.load_weight_arrays(arrays)
