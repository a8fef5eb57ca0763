"""Binary checkpoints.

Layout (all integers unsigned 32-bit little-endian)::

    b"ALPS"  version
    config block    : length + UTF-8 ``key = value`` text (full training config)
    metadata block  : length + UTF-8 ``key = value`` text (chosen variant, inlier class, ...)
    parameter count
    per parameter   : name length, UTF-8 name, rank, dims..., float32 LE values

The file is a pure function of its inputs, so identical runs produce
byte-identical checkpoints.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from alps.config import TrainingConfig, parse_text, training_from_mapping, training_to_text
from alps.errors import ConfigError, DataError
from alps.models import Networks

MAGIC = b"ALPS"
VERSION = 1


class CheckpointError(DataError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    networks: Networks
    config: TrainingConfig
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def encoder(self):
        return self.networks.encoder

    @property
    def decoder(self):
        return self.networks.decoder

    @property
    def distorter(self):
        return self.networks.distorter


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _block(text: str) -> bytes:
    raw = text.encode("utf-8")
    return _u32(len(raw)) + raw


def to_bytes(networks: Networks, config: TrainingConfig, meta: dict[str, str] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(VERSION))
    buf.write(_block(training_to_text(config)))
    buf.write(_block("".join(f"{k} = {v}\n" for k, v in sorted((meta or {}).items()))))
    params = networks.named_parameters()
    buf.write(_u32(len(params)))
    for name, p in params.items():
        buf.write(_block(name))
        buf.write(_u32(p.data.ndim))
        for d in p.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path: str | os.PathLike, networks: Networks, config: TrainingConfig,
                    meta: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(to_bytes(networks, config, meta))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic = data[:4]
    if len(magic) < len(MAGIC) and MAGIC.startswith(magic):
        raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(data)} (inside the header)")
    if magic != MAGIC:
        raise BadMagicError(f"not an ALPS checkpoint (magic {magic!r})")
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    try:
        config = training_from_mapping(parse_text(r.text(), "checkpoint config"))
    except ConfigError as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    meta = parse_text(r.text(), "checkpoint metadata")
    networks = Networks.build(config.model_config(), seed=0)
    params = networks.named_parameters()
    count = r.u32()
    if count != len(params):
        raise CheckpointError(f"checkpoint holds {count} parameters, architecture expects {len(params)}")
    for _ in range(count):
        name = r.text()
        shape = tuple(r.u32() for _ in range(r.u32()))
        values = np.frombuffer(r.take(4 * int(np.prod(shape, dtype=np.int64))), dtype="<f4")
        if name not in params or params[name].shape != shape:
            raise CheckpointError(f"unexpected parameter {name!r} with shape {shape}")
        params[name].data = values.reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last parameter")
    return Checkpoint(networks, config, meta)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return from_bytes(data)
