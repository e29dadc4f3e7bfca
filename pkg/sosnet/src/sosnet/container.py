"""Reader/writer for the engine's record container, implemented locally.

The estimator talks to the simulation engine only through files, so this
module re-implements the container framing from its byte-level contract:
magic ``PAUS``, little-endian u32 version, then named blocks of
(u16 name length, UTF-8 name, u8 dtype, u8 rank, rank u32 dims, payload).
Dtype 0 is float32 LE row-major, dtype 1 is strict UTF-8 JSON as a rank-1
byte run. A trailing ``meta`` JSON block carries grid geometry and user
metadata. Malformed input surfaces as DatasetError.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import DatasetError

MAGIC = b"PAUS"
FORMAT_VERSION = 1
DTYPE_F32 = 0
DTYPE_JSON = 1

# assumed grid spacing for map files whose metadata omits it: 384 px at
# 0.1 mm covers the full-scale 38.4 mm field
DEFAULT_SOS_RESOLUTION = 0.1e-3


@dataclass(frozen=True)
class RecordView:
    """Tensors and metadata of one record file, as plain arrays."""

    tensors: Dict[str, np.ndarray]
    meta: Mapping = field(default_factory=dict)

    @property
    def rf(self) -> np.ndarray:
        if "rf" not in self.tensors:
            raise DatasetError("record carries no rf tensor")
        return self.tensors["rf"]

    @property
    def sos(self) -> Optional[np.ndarray]:
        return self.tensors.get("sos")

    def sos_geometry(self) -> Tuple[float, Tuple[float, float]]:
        desc = self.meta.get("sos", {})
        res = float(desc.get("resolution", DEFAULT_SOS_RESOLUTION))
        origin = tuple(desc.get("origin", (0.0, 0.0)))
        return res, origin


class _Cursor:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DatasetError(f"truncated container {self.path}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.buf)


def read_record(path) -> RecordView:
    """Parse every tensor block plus the meta JSON of one container."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    cur = _Cursor(buf, path)
    if cur.take(4) != MAGIC:
        raise DatasetError(f"bad magic in {path}")
    (version,) = struct.unpack("<I", cur.take(4))
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported container version {version} in {path}")
    tensors: Dict[str, np.ndarray] = {}
    meta: Mapping = {}
    while not cur.exhausted:
        (name_len,) = struct.unpack("<H", cur.take(2))
        name = cur.take(name_len).decode("utf-8")
        dtype, rank = struct.unpack("<BB", cur.take(2))
        dims = struct.unpack("<" + "I" * rank, cur.take(4 * rank))
        if dtype == DTYPE_JSON:
            if rank != 1:
                raise DatasetError(f"JSON block {name!r} must be rank 1")
            payload = cur.take(dims[0])
            if name == "meta":
                meta = json.loads(payload.decode("utf-8"))
            continue
        if dtype != DTYPE_F32:
            raise DatasetError(f"unknown dtype code {dtype} in {path}")
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = cur.take(4 * count)
        if name in tensors:
            raise DatasetError(f"duplicate tensor {name!r} in {path}")
        tensors[name] = np.frombuffer(payload, "<f4").reshape(dims).copy()
    return RecordView(tensors, meta)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    head = struct.pack("<H", len(name.encode())) + name.encode()
    head += struct.pack("<BB", DTYPE_F32, arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + payload


def _pack_json(name: str, obj) -> bytes:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                         allow_nan=False).encode("utf-8")
    head = struct.pack("<H", len(name.encode())) + name.encode()
    head += struct.pack("<BB", DTYPE_JSON, 1)
    head += struct.pack("<I", len(payload))
    return head + payload


def write_sos(values: np.ndarray, path, resolution: float = DEFAULT_SOS_RESOLUTION,
              origin: Tuple[float, float] = (0.0, 0.0),
              meta: Optional[Mapping] = None) -> None:
    """Write a bare map container the engine consumes without conversion."""
    v = np.asarray(values, np.float32)
    if v.ndim != 2:
        raise DatasetError(f"sos map must be 2D, got shape {v.shape}")
    doc = {"record": dict(meta or {}),
           "sos": {"resolution": float(resolution),
                   "origin": [float(origin[0]), float(origin[1])]}}
    blob = (MAGIC + struct.pack("<I", FORMAT_VERSION)
            + _pack_tensor("sos", v) + _pack_json("meta", doc))
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e


def write_record(path, tensors: Mapping[str, np.ndarray],
                 meta: Optional[Mapping] = None) -> None:
    """Write a record container (used to build toy datasets in tests).

    The meta document is passed through as-is, so callers control the
    per-tensor descriptions the engine format expects.
    """
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in tensors:
        if name == "meta":
            raise DatasetError("tensor name 'meta' is reserved")
        parts.append(_pack_tensor(name, np.asarray(tensors[name])))
    parts.append(_pack_json("meta", dict(meta or {})))
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e


def load_manifest(dataset_dir) -> Tuple[List[Path], List[Path], dict]:
    """Split record paths per the dataset's manifest document."""
    root = Path(dataset_dir)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise DatasetError(f"no manifest.json under {root}")
    try:
        doc = json.loads(manifest.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"unreadable manifest {manifest}: {e}") from e
    train, valid = [], []
    for row in doc.get("records", []):
        path = root / row["file"]
        if not path.exists():
            raise DatasetError(f"manifest names missing record {path}")
        (train if row.get("split") == "train" else valid).append(path)
    if not train and not valid:
        raise DatasetError(f"manifest {manifest} lists no records")
    return train, valid, doc
