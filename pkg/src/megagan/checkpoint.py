"""Self-describing binary checkpoints.

Layout::

    b"GANF" | u16 version | u32 header length | header (UTF-8 JSON) | payload | u32 CRC-32

The header holds both network specs, the config snapshot, training scalars
and a table of named arrays (dtype, shape, offset into the payload). Arrays
are stored little-endian at their declared precision. The CRC covers header
and payload. JSON is written with sorted keys so save -> load -> save is
byte-identical.
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

from .errors import BadMagicError, ChecksumError, CheckpointError, UnsupportedVersionError

MAGIC = b"GANF"
FORMAT_VERSION = 1
# highest version this reader understands; readers accept every version up to it
READER_MAX_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    generator: dict
    discriminator: dict
    precision: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _le(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def to_bytes(ckpt: Checkpoint) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, arr in ckpt.arrays.items():
        a = np.ascontiguousarray(arr, dtype=_le(arr.dtype))
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "generator": ckpt.generator,
        "discriminator": ckpt.discriminator,
        "precision": ckpt.precision,
        "state": ckpt.state,
        "config": ckpt.config,
        "arrays": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = hbytes + b"".join(chunks)
    return _PREFIX.pack(MAGIC, ckpt.version, len(hbytes)) + body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes, path=None) -> Checkpoint:
    where = f" in {path}" if path else ""
    if len(data) < _PREFIX.size + 4:
        raise BadMagicError(f"checkpoint too short{where}")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad checkpoint magic {magic!r}{where}")
    if not 1 <= version <= READER_MAX_VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} not supported (reader handles <= {READER_MAX_VERSION}){where}")
    body = data[_PREFIX.size : -4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"checkpoint checksum mismatch{where}")
    if hlen > len(body):
        raise CheckpointError(f"checkpoint header length exceeds file size{where}")
    try:
        header = json.loads(body[:hlen].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"unreadable checkpoint header{where}: {e}") from e
    payload = body[hlen:]
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        a = np.frombuffer(payload, dtype=dt, count=entry["nbytes"] // dt.itemsize, offset=entry["offset"])
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(dt.newbyteorder("="))
    return Checkpoint(
        generator=header["generator"],
        discriminator=header["discriminator"],
        precision=header["precision"],
        arrays=arrays,
        state=header["state"],
        config=header["config"],
        version=version,
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    data = to_bytes(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return from_bytes(data, path=path)
