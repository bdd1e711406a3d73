"""Minimal single-file NIfTI-1 reader and writer.

Covers exactly what the pipeline needs: .nii / .nii.gz containers, the
348-byte header, 1- to 3-dimensional volumes, datatypes uint8 (2), int16 (4)
and float32 (16), and scl_slope / scl_inter scaling.  The raw buffer is kept
in its native dtype so write -> read round trips are bit-lossless;
:meth:`NiftiVolume.floats` applies the declared scaling and converts for the
training pipeline.

Files are written little-endian with vox_offset 352; big-endian files are
byte-swapped on read (detected via sizeof_hdr).  Gzip members are written
with mtime pinned to zero so identical volumes produce identical bytes.
"""

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import NiftiError

HEADER_SIZE = 348
MAGIC = b"n+1\x00"
VOX_OFFSET = 352

# NIfTI-1 datatype codes for the supported element types.
DTYPE_CODES = {2: np.uint8, 4: np.int16, 16: np.float32}
CODE_FOR_DTYPE = {np.dtype(v): k for k, v in DTYPE_CODES.items()}
BITPIX = {2: 8, 4: 16, 16: 32}


@dataclass
class NiftiVolume:
    data: np.ndarray                  # native dtype, up to rank 3
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    descrip: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim < 1 or arr.ndim > 3:
            raise NiftiError(f"volume rank must be 1..3, got {arr.ndim}")
        if arr.dtype not in CODE_FOR_DTYPE:
            raise NiftiError(
                f"unsupported dtype {arr.dtype}; supported: "
                f"{sorted(str(np.dtype(d)) for d in DTYPE_CODES.values())}")
        self.data = np.ascontiguousarray(arr)

    @property
    def datatype_code(self) -> int:
        return CODE_FOR_DTYPE[self.data.dtype]

    def floats(self, dtype=np.float32) -> np.ndarray:
        """Buffer with scl scaling applied (when slope is nonzero)."""
        out = self.data.astype(np.float64)
        if self.scl_slope != 0.0:
            out = out * self.scl_slope + self.scl_inter
        return out.astype(dtype)


def _open_maybe_gzip(path, mode):
    if mode == "rb":
        with open(path, "rb") as f:
            head = f.read(2)
        if head == b"\x1f\x8b":
            return gzip.open(path, "rb")
        return open(path, "rb")
    if str(path).endswith(".gz"):
        return gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)
    return open(path, "wb")


def load_nifti(path) -> NiftiVolume:
    try:
        with _open_maybe_gzip(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise NiftiError(f"cannot read {path}: {e}")
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"{path}: truncated header ({len(raw)} bytes)")

    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    if sizeof_hdr == 348:
        bo = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == 348:
        bo = ">"
    else:
        raise NiftiError(f"{path}: sizeof_hdr is not 348 in either byte order")

    magic = raw[344:348]
    if magic != MAGIC:
        raise NiftiError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")

    dim = struct.unpack_from(bo + "8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 3:
        raise NiftiError(f"{path}: unsupported dim[0]={ndim} (need 1..3)")
    shape = tuple(dim[1:1 + ndim])
    if any(e < 1 for e in shape):
        raise NiftiError(f"{path}: non-positive extent in dims {shape}")

    datatype, bitpix = struct.unpack_from(bo + "2h", raw, 70)
    if datatype not in DTYPE_CODES:
        raise NiftiError(f"{path}: unsupported datatype code {datatype}")
    if bitpix != BITPIX[datatype]:
        raise NiftiError(f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")

    vox_offset = struct.unpack_from(bo + "f", raw, 108)[0]
    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise NiftiError(f"{path}: vox_offset {vox_offset} below header size")
    scl_slope, scl_inter = struct.unpack_from(bo + "2f", raw, 112)
    descrip = raw[148:228].split(b"\x00", 1)[0].decode("utf-8", "replace")

    dt = np.dtype(DTYPE_CODES[datatype]).newbyteorder(bo)
    count = int(np.prod(shape))
    need = offset + count * dt.itemsize
    if len(raw) < need:
        raise NiftiError(f"{path}: truncated payload ({len(raw)} < {need} bytes)")
    flat = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    # NIfTI data is Fortran-ordered (first axis fastest).
    data = flat.reshape(shape, order="F")
    data = np.ascontiguousarray(data.astype(data.dtype.newbyteorder("=")))
    return NiftiVolume(data=data, scl_slope=float(scl_slope),
                       scl_inter=float(scl_inter), descrip=descrip)


def save_nifti(vol: NiftiVolume, path) -> None:
    if not isinstance(vol, NiftiVolume):
        vol = NiftiVolume(data=vol)
    shape = vol.data.shape
    dim = [vol.data.ndim] + list(shape) + [1] * (7 - vol.data.ndim)
    code = vol.datatype_code

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, code, BITPIX[code])
    struct.pack_into("<8f", hdr, 76, 0.0, *(1.0,) * 7)       # pixdim: unit voxels
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, vol.scl_slope, vol.scl_inter)
    desc = vol.descrip.encode("utf-8")[:79]
    hdr[148:148 + len(desc)] = desc
    struct.pack_into("<h", hdr, 252, 0)                       # qform_code
    struct.pack_into("<h", hdr, 254, 0)                       # sform_code
    hdr[344:348] = MAGIC

    payload = np.ascontiguousarray(vol.data, dtype=vol.data.dtype.newbyteorder("<"))
    try:
        with _open_maybe_gzip(path, "wb") as f:
            f.write(bytes(hdr))
            f.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
            f.write(payload.tobytes(order="F"))
    except OSError as e:
        raise NiftiError(f"cannot write {path}: {e}")
