"""Bit-exact on-disk container for paired acquisition/ground-truth records.

File layout: magic ``PAUS``, a little-endian u32 format version, then a
sequence of named blocks. Each block is a u16 LE name length, the UTF-8
name, a u8 dtype code, a u8 rank, rank u32 LE dimensions, and the
row-major payload. Dtype 0 is float32 LE; dtype 1 is UTF-8 JSON carried
as a rank-1 byte run. Records require tensors ``rf`` and ``sos``;
``p0`` and ``pa_rf`` are optional; unrecognized float tensors are kept
in ``extras``. A ``meta`` JSON block always comes last and carries both
user metadata and the scalar fields (sampling rates, grid spacings)
needed to rebuild the typed objects exactly. JSON is strict (sorted
keys, no NaN/Infinity) so identical records serialize to identical
bytes and any language can parse the result.
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .core import Grid2D, Image2D, RFFrame, SosMap
from .errors import (
    BadMagic,
    EmptyDir,
    IoError,
    ShapeError,
    TruncatedFile,
    UnsupportedVersion,
)

MAGIC = b"PAUS"
FORMAT_VERSION = 1
DTYPE_F32 = 0
DTYPE_JSON = 1

CANONICAL_RF_SHAPE = (128, 1024)
CANONICAL_SOS_SHAPE = (384, 384)

# resolution assumed for bare prediction files that omit grid metadata;
# a 384x384 map at 0.1 mm spans the full-scale 38.4 mm field of view
DEFAULT_SOS_RESOLUTION = 0.1e-3


@dataclass(frozen=True)
class DatasetRecord:
    """One paired training/evaluation record.

    ``meta`` carries generation provenance (seed, phantom_kind,
    background_sos, snr_db, pipeline_version) and must be strict-JSON
    serializable. ``pa_rf`` optionally stores the photoacoustic
    acquisition so reconstruction never re-simulates. ``extras`` holds
    any additional named tensors round-tripped verbatim.
    """

    rf: RFFrame
    sos: SosMap
    p0: Optional[Image2D] = None
    pa_rf: Optional[RFFrame] = None
    meta: Mapping = field(default_factory=dict)
    extras: Mapping[str, np.ndarray] = field(default_factory=dict)


def is_canonical(record: DatasetRecord) -> bool:
    """True when the record matches the full-scale model contract."""
    return (record.rf.data.shape == CANONICAL_RF_SHAPE
            and record.sos.values.shape == CANONICAL_SOS_SHAPE)


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


def _frame_meta(frame: RFFrame) -> dict:
    return {"sampling_rate": frame.sampling_rate, "t0": frame.t0,
            "meta": dict(frame.meta)}


def _record_bytes(record: DatasetRecord) -> bytes:
    meta_json = {
        "record": dict(record.meta),
        "rf": _frame_meta(record.rf),
        "sos": {"resolution": record.sos.resolution,
                "origin": list(record.sos.origin)},
    }
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             _pack_tensor("rf", record.rf.data),
             _pack_tensor("sos", record.sos.values)]
    if record.p0 is not None:
        parts.append(_pack_tensor("p0", record.p0.values))
        meta_json["p0"] = {"dx": record.p0.grid.dx,
                           "origin": list(record.p0.grid.origin),
                           "kind": record.p0.kind}
    if record.pa_rf is not None:
        parts.append(_pack_tensor("pa_rf", record.pa_rf.data))
        meta_json["pa_rf"] = _frame_meta(record.pa_rf)
    reserved = {"rf", "sos", "p0", "pa_rf", "meta"}
    for name in sorted(record.extras):
        if name in reserved:
            raise ShapeError(f"extras may not use reserved name {name!r}")
        parts.append(_pack_tensor(name, np.asarray(record.extras[name])))
    parts.append(_pack_json("meta", meta_json))
    return b"".join(parts)


def write_record(record: DatasetRecord, path) -> None:
    """Serialize a record; identical records produce identical bytes."""
    buf = _record_bytes(record)
    try:
        with open(path, "wb") as f:
            f.write(buf)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


class _Cursor:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncatedFile(
                f"{self.path}: needed {n} bytes at offset {self.off}, "
                f"file has {len(self.buf)}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    @property
    def exhausted(self) -> bool:
        return self.off >= len(self.buf)


def _parse_blocks(buf: bytes, path) -> Dict[str, Tuple[int, object]]:
    """Return {name: (dtype_code, ndarray | parsed JSON)}."""
    cur = _Cursor(buf, path)
    if cur.take(4) != MAGIC:
        raise BadMagic(f"{path}: not a PAUS container")
    version = struct.unpack("<I", cur.take(4))[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version}")
    blocks: Dict[str, Tuple[int, object]] = {}
    while not cur.exhausted:
        name_len = struct.unpack("<H", cur.take(2))[0]
        name = cur.take(name_len).decode("utf-8")
        dtype, rank = struct.unpack("<BB", cur.take(2))
        dims = [struct.unpack("<I", cur.take(4))[0] for _ in range(rank)]
        if name in blocks:
            raise ShapeError(f"{path}: duplicate block {name!r}")
        if dtype == DTYPE_F32:
            n = int(np.prod(dims, dtype=np.int64)) if dims else 1
            raw = cur.take(4 * n)
            arr = np.frombuffer(raw, "<f4").reshape(dims)
            blocks[name] = (dtype, arr)
        elif dtype == DTYPE_JSON:
            if rank != 1:
                raise ShapeError(f"{path}: JSON block {name!r} rank {rank}")
            raw = cur.take(dims[0])
            blocks[name] = (dtype, json.loads(raw.decode("utf-8")))
        else:
            raise UnsupportedVersion(
                f"{path}: unknown dtype code {dtype} in block {name!r}")
    return blocks


def _require_2d(blocks, name: str, path) -> np.ndarray:
    if name not in blocks:
        raise ShapeError(f"{path}: required block {name!r} missing")
    dtype, arr = blocks[name]
    if dtype != DTYPE_F32 or arr.ndim != 2:
        raise ShapeError(f"{path}: block {name!r} is not a 2D float tensor")
    return arr


def read_record(path) -> DatasetRecord:
    """Parse and validate a record file."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    blocks = _parse_blocks(buf, path)
    rf_arr = _require_2d(blocks, "rf", path)
    sos_arr = _require_2d(blocks, "sos", path)
    if "meta" not in blocks or blocks["meta"][0] != DTYPE_JSON:
        raise ShapeError(f"{path}: required JSON block 'meta' missing")
    meta_json = blocks["meta"][1]
    if "rf" not in meta_json or "sos" not in meta_json:
        raise ShapeError(f"{path}: meta lacks rf/sos field descriptions")

    def frame(arr, desc) -> RFFrame:
        return RFFrame(arr, desc["sampling_rate"], desc.get("t0", 0.0),
                       dict(desc.get("meta", {})))

    rf = frame(rf_arr, meta_json["rf"])
    sd = meta_json["sos"]
    sos = SosMap(sos_arr, sd["resolution"], tuple(sd.get("origin", (0, 0))))
    p0 = None
    if "p0" in blocks:
        arr = _require_2d(blocks, "p0", path)
        pd = meta_json.get("p0", {})
        grid = Grid2D(arr.shape[0], arr.shape[1],
                      pd.get("dx", sd["resolution"]),
                      tuple(pd.get("origin", (0, 0))))
        p0 = Image2D(arr, grid, pd.get("kind", "initial_pressure"))
    pa_rf = None
    if "pa_rf" in blocks:
        pa_rf = frame(_require_2d(blocks, "pa_rf", path),
                      meta_json.get("pa_rf", meta_json["rf"]))
    extras = {name: np.array(arr) for name, (dt, arr) in blocks.items()
              if dt == DTYPE_F32 and name not in ("rf", "sos", "p0", "pa_rf")}
    return DatasetRecord(rf, sos, p0, pa_rf,
                         dict(meta_json.get("record", {})), extras)


def write_sos(sos: SosMap, path, meta: Optional[Mapping] = None) -> None:
    """Write a map-only container (the prediction interchange file)."""
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             _pack_tensor("sos", sos.values),
             _pack_json("meta", {
                 "record": dict(meta or {}),
                 "sos": {"resolution": sos.resolution,
                         "origin": list(sos.origin)},
             })]
    try:
        with open(path, "wb") as f:
            f.write(b"".join(parts))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_sos(path) -> SosMap:
    """Read the ``sos`` tensor from any container, full record or
    map-only prediction file alike."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    blocks = _parse_blocks(buf, path)
    arr = _require_2d(blocks, "sos", path)
    desc = {}
    if "meta" in blocks and blocks["meta"][0] == DTYPE_JSON:
        desc = blocks["meta"][1].get("sos", {})
    return SosMap(arr, desc.get("resolution", DEFAULT_SOS_RESOLUTION),
                  tuple(desc.get("origin", (0, 0))))


def write_tensors(path, tensors: Mapping[str, np.ndarray],
                  meta: Optional[Mapping] = None) -> None:
    """Write a bare named-tensor container (noise banks, sweep grids)."""
    if not tensors:
        raise ShapeError("write_tensors needs at least one tensor")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in sorted(tensors):
        if name == "meta":
            raise ShapeError("tensor name 'meta' is reserved")
        parts.append(_pack_tensor(name, np.asarray(tensors[name])))
    parts.append(_pack_json("meta", {"record": dict(meta or {})}))
    try:
        with open(path, "wb") as f:
            f.write(b"".join(parts))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_tensors(path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read every float tensor plus the user metadata from a container."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    blocks = _parse_blocks(buf, path)
    tensors = {name: np.array(arr) for name, (dt, arr) in blocks.items()
               if dt == DTYPE_F32}
    meta = {}
    if "meta" in blocks and blocks["meta"][0] == DTYPE_JSON:
        meta = dict(blocks["meta"][1].get("record", {}))
    return tensors, meta


def read_meta(path) -> dict:
    """Read only the JSON metadata, seeking past tensor payloads."""
    try:
        size = os.stat(path).st_size
        with open(path, "rb") as f:
            head = f.read(8)
            if len(head) < 8:
                raise TruncatedFile(f"{path}: shorter than the header")
            if head[:4] != MAGIC:
                raise BadMagic(f"{path}: not a PAUS container")
            version = struct.unpack("<I", head[4:])[0]
            if version != FORMAT_VERSION:
                raise UnsupportedVersion(f"{path}: format version {version}")

            def need(n):
                raw = f.read(n)
                if len(raw) < n:
                    raise TruncatedFile(f"{path}: block header cut short")
                return raw

            while True:
                raw = f.read(2)
                if not raw:
                    break
                if len(raw) < 2:
                    raise TruncatedFile(f"{path}: block header cut short")
                name_len = struct.unpack("<H", raw)[0]
                name = need(name_len).decode("utf-8")
                dtype, rank = struct.unpack("<BB", need(2))
                dims = [struct.unpack("<I", need(4))[0] for _ in range(rank)]
                if dtype == DTYPE_F32:
                    n = int(np.prod(dims, dtype=np.int64)) if dims else 1
                    f.seek(4 * n, 1)
                    if f.tell() > size:
                        raise TruncatedFile(
                            f"{path}: tensor {name!r} payload cut short")
                elif dtype == DTYPE_JSON:
                    if rank != 1:
                        raise ShapeError(
                            f"{path}: JSON block {name!r} rank {rank}")
                    payload = need(dims[0])
                    if name == "meta":
                        return json.loads(payload.decode("utf-8"))
                else:
                    raise UnsupportedVersion(
                        f"{path}: unknown dtype code {dtype}")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    raise ShapeError(f"{path}: required JSON block 'meta' missing")


def split_counts(n: int, train_fraction: float = 0.9) -> Tuple[int, int]:
    """Train count floors so the validation side never starves."""
    train = math.floor(train_fraction * n)
    return train, n - train


def write_manifest(records_dir, seed: int = 0, train_fraction: float = 0.9,
                   filename: str = "manifest.json") -> Path:
    """Scan a directory of record files and write the train/valid
    manifest: a seeded shuffle assigns the first 90% (floored) to train.

    Records are listed in sorted filename order; the assignment and the
    document bytes are deterministic for a fixed (directory, seed).
    """
    root = Path(records_dir)
    names = sorted(p.name for p in root.glob("*.paus"))
    if not names:
        raise EmptyDir(f"no .paus records under {root}")
    n_train, _ = split_counts(len(names), train_fraction)
    perm = np.random.default_rng(seed).permutation(len(names))
    train_idx = set(int(i) for i in perm[:n_train])
    records = []
    for i, name in enumerate(names):
        meta_json = read_meta(root / name)
        records.append({
            "file": name,
            "meta": meta_json.get("record", {}),
            "split": "train" if i in train_idx else "valid",
        })
    doc = {"version": FORMAT_VERSION, "seed": seed,
           "train_fraction": train_fraction, "records": records}
    out = root / filename
    try:
        out.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {out}: {e}") from e
    return out


def load_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
