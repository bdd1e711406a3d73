"""Binary checkpoint container for parameters and optimizer state.

Layout (all integers little-endian):

    magic   4 bytes  "DDUN"
    version u32      (currently 1)
    config  u64 length + UTF-8 bytes (resolved run config echo)
    count   u64      number of parameter records
    records count times:
        name     u64 length + UTF-8 bytes
        rank     u64
        extents  rank * u64
        dtype    u32 element-type code (16 = float32, 64 = float64)
        data     raw little-endian element bytes
    optflag u8       0 = no optimizer state
    if optflag == 1:
        step     u64
        moments  3 sections (m, v, vmax), each: u64 count + records as above
    checksum u64     FNV-1a 64 over every preceding byte

Writes are staged in memory and flushed once, so save -> load -> save is
byte-identical.
"""

import io
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CheckpointError
from .optim import AdamWState

MAGIC = b"DDUN"
VERSION = 1

DTYPE_CODES = {16: np.dtype("<f4"), 64: np.dtype("<f8")}
CODE_FOR_KIND = {np.dtype(np.float32): 16, np.dtype(np.float64): 64}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class Checkpoint:
    config_text: str
    params: dict                                 # name -> float ndarray
    opt_step: Optional[int] = None
    opt_moments: Optional[dict] = None           # {"m": {...}, "v": {...}, "vmax": {...}}
    version: int = VERSION

    def state(self) -> Optional[AdamWState]:
        if self.opt_step is None:
            return None
        return AdamWState(step=self.opt_step,
                          m={k: v.copy() for k, v in self.opt_moments["m"].items()},
                          v={k: v.copy() for k, v in self.opt_moments["v"].items()},
                          vmax={k: v.copy() for k, v in self.opt_moments["vmax"].items()})


def _write_record(buf, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in CODE_FOR_KIND:
        raise CheckpointError(f"unsupported element type {arr.dtype} for {name!r}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<Q", arr.ndim))
    for e in arr.shape:
        buf.write(struct.pack("<Q", e))
    buf.write(struct.pack("<I", CODE_FOR_KIND[arr.dtype]))
    buf.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _read_record(r: _Reader):
    name = r.take(r.u64()).decode("utf-8")
    rank = r.u64()
    if rank > 8:
        raise CheckpointError(f"implausible rank {rank} for {name!r}")
    shape = tuple(r.u64() for _ in range(rank))
    code = r.u32()
    if code not in DTYPE_CODES:
        raise CheckpointError(f"unknown element-type code {code} for {name!r}")
    dt = DTYPE_CODES[code]
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    arr = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape)
    return name, arr.astype(dt.newbyteorder("="), copy=True)


def save_checkpoint(path, params: dict, config_text: str = "",
                    opt_state: Optional[AdamWState] = None) -> None:
    """`params` maps names to arrays or objects with a `.data` array."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = config_text.encode("utf-8")
    buf.write(struct.pack("<Q", len(cfg)))
    buf.write(cfg)
    names = sorted(params)
    buf.write(struct.pack("<Q", len(names)))
    for name in names:
        p = params[name]
        # ndarray.data is a memoryview, so only unwrap non-array wrappers
        _write_record(buf, name, p if isinstance(p, np.ndarray) else np.asarray(p.data))
    if opt_state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", opt_state.step))
        for moments in (opt_state.m, opt_state.v, opt_state.vmax):
            keys = sorted(moments)
            buf.write(struct.pack("<Q", len(keys)))
            for name in keys:
                _write_record(buf, name, moments[name])
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<Q", fnv1a64(payload)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 8:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    payload, tail = blob[:-8], blob[-8:]
    if struct.unpack("<Q", tail)[0] != fnv1a64(payload):
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    r = _Reader(payload)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_text = r.take(r.u64()).decode("utf-8")
    params = dict(_read_record(r) for _ in range(r.u64()))
    opt_step = None
    moments = None
    if r.u8() == 1:
        opt_step = r.u64()
        moments = {}
        for key in ("m", "v", "vmax"):
            moments[key] = dict(_read_record(r) for _ in range(r.u64()))
            if set(moments[key]) != set(params):
                raise CheckpointError(f"optimizer section {key!r} does not cover the parameter set")
    if r.pos != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - r.pos} trailing bytes after optimizer section")
    return Checkpoint(config_text=config_text, params=params,
                      opt_step=opt_step, opt_moments=moments, version=version)
