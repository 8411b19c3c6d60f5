"""Single-file checkpoint container.

Layout (all integers little-endian)::

    b"TERC"                 magic
    uint32                  format version
    uint64                  header length in bytes
    header                  UTF-8 JSON: {"meta": ..., "tensors": [...]}
    payload                 float32 tensors, row-major, back to back

Each ``tensors`` entry is ``{"name", "rows", "cols", "offset"}`` with the
offset counted in bytes from the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointVersionError, TensorExtentError

MAGIC = b"TERC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    meta: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, array: np.ndarray) -> None:
        a = np.asarray(array)
        if a.ndim == 1:
            a = a[None, :]
        if a.ndim != 2:
            raise CheckpointError(f"tensor {name} must be 1-D or 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise CheckpointError(f"tensor {name} contains non-finite values")
        self.tensors[name] = np.ascontiguousarray(a, dtype=_F32)

    def get(self, name: str) -> np.ndarray:
        """Tensor as a writable native float32 array."""
        try:
            return np.array(self.tensors[name], dtype=np.float32)
        except KeyError:
            raise CheckpointError(f"checkpoint has no tensor {name!r}") from None

    def vector(self, name: str) -> np.ndarray:
        return self.get(name).reshape(-1)

    def to_bytes(self) -> bytes:
        directory, offset = [], 0
        for name, a in self.tensors.items():
            directory.append({"name": name, "rows": int(a.shape[0]), "cols": int(a.shape[1]),
                              "offset": offset})
            offset += a.size * 4
        header = json.dumps({"meta": self.meta, "tensors": directory}, sort_keys=True,
                            separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)), header]
        parts += [a.astype(_F32, copy=False).tobytes(order="C") for a in self.tensors.values()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < _PREFIX.size:
            raise CheckpointError("file too short for a checkpoint prefix")
        magic, version, hlen = _PREFIX.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format version {version}, this build reads version {FORMAT_VERSION}")
        start = _PREFIX.size + hlen
        if start > len(data):
            raise TensorExtentError(f"header length {hlen} runs past end of file ({len(data)} bytes)")
        try:
            header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
        payload = memoryview(data)[start:]
        tensors: dict[str, np.ndarray] = {}
        end_max = 0
        for entry in header.get("tensors", []):
            name, rows, cols, off = entry["name"], entry["rows"], entry["cols"], entry["offset"]
            nbytes = rows * cols * 4
            if off < 0 or rows < 0 or cols < 0 or off + nbytes > len(payload):
                raise TensorExtentError(
                    f"tensor extent out of bounds: {name} needs bytes [{off}, {off + nbytes}) "
                    f"of a {len(payload)}-byte payload")
            tensors[name] = np.frombuffer(payload[off:off + nbytes], dtype=_F32).reshape(rows, cols).copy()
            end_max = max(end_max, off + nbytes)
        if end_max != len(payload):
            raise TensorExtentError(f"payload has {len(payload) - end_max} trailing bytes")
        return cls(header.get("meta", {}), tensors)

    def save(self, path: str | Path) -> None:
        """Write atomically via a temp file in the target directory."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(self.to_bytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())
