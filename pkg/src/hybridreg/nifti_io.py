"""Minimal single-file NIfTI-1 reader/writer and a raw + JSON sidecar format.

Only uncompressed ``.nii`` files are handled; decompress ``.nii.gz``
beforehand (e.g. ``gunzip -k``). Orientation (qform/sform) is ignored.
Files are always written as little-endian float32 with ``vox_offset=352``.

Displacement fields are stored with ``dim[0] = 4`` and ``dim[4] = 3``
(component-major) and tagged half/full through ``intent_name``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .volume_core import DisplacementField, LabelMap, Level, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"
DATATYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
BITPIX = {2: 8, 4: 16, 16: 32}
FIELD_TAG = "hybridreg:"

# (offset, struct code) of the header fields this module touches
_SIZEOF_HDR = (0, "i")
_DIM = (40, "8h")
_INTENT_CODE = (68, "h")
_DATATYPE = (70, "h")
_BITPIX = (72, "h")
_PIXDIM = (76, "8f")
_VOX_OFFSET = (108, "f")
_SCL_SLOPE = (112, "f")
_SCL_INTER = (116, "f")
_XYZT_UNITS = (123, "B")
_INTENT_NAME = (328, "16s")
_MAGIC = (344, "4s")

NIFTI_INTENT_VECTOR = 1007


def _get(buf, spec, endian):
    offset, code = spec
    vals = struct.unpack_from(endian + code, buf, offset)
    return vals if len(vals) > 1 else vals[0]


def _put(buf, spec, endian, *vals):
    offset, code = spec
    struct.pack_into(endian + code, buf, offset, *vals)


def read_header(buf: bytes) -> dict:
    """Decode the fields used here; detects byte order from ``sizeof_hdr``."""
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"file too short for a NIfTI-1 header ({len(buf)} bytes)")
    for endian in ("<", ">"):
        if _get(buf, _SIZEOF_HDR, endian) == HEADER_SIZE:
            break
    else:
        raise FormatError("sizeof_hdr is not 348 in either byte order")
    magic = _get(buf, _MAGIC, endian)
    if magic != MAGIC:
        raise FormatError(f"unsupported magic {magic!r}; only single-file n+1 is read")
    return {
        "endian": endian,
        "dim": _get(buf, _DIM, endian),
        "datatype": _get(buf, _DATATYPE, endian),
        "pixdim": _get(buf, _PIXDIM, endian),
        "vox_offset": _get(buf, _VOX_OFFSET, endian),
        "scl_slope": _get(buf, _SCL_SLOPE, endian),
        "scl_inter": _get(buf, _SCL_INTER, endian),
        "intent_name": _get(buf, _INTENT_NAME, endian).split(b"\x00")[0].decode("ascii", "replace"),
    }


def read_nifti(path):
    """Load a scalar volume or a displacement field.

    Returns
    -------
    Volume or DisplacementField
        A field when ``dim[0] == 4`` and ``dim[4] == 3``.

    Raises
    ------
    FormatError
        Bad magic, unsupported datatype, unexpected dimensionality or a
        data section shorter than the header promises.
    """
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        head = fh.read(HEADER_SIZE)
        hdr = read_header(head)
        dim = hdr["dim"]
        ndim = dim[0]
        if ndim == 3 or (ndim == 4 and dim[4] == 1):
            shape, is_field = dim[1:4], False
        elif ndim == 4 and dim[4] == 3:
            shape, is_field = dim[1:5], True
        else:
            raise FormatError(f"unsupported dim {dim[:ndim + 1]}")
        if any(d < 1 for d in shape):
            raise FormatError(f"non-positive dimension in {dim[:ndim + 1]}")
        code = hdr["datatype"]
        if code not in DATATYPES:
            raise FormatError(f"unsupported datatype code {code}")
        dtype = np.dtype(DATATYPES[code]).newbyteorder(hdr["endian"])
        count = int(np.prod(shape))
        offset = int(hdr["vox_offset"])
        if offset < HEADER_SIZE:
            raise FormatError(f"vox_offset {offset} lies inside the header")
        # bound the read by the real file size before allocating
        if offset + count * dtype.itemsize > size:
            raise FormatError(
                f"data section truncated: need {count * dtype.itemsize} bytes at offset "
                f"{offset}, file has {size}")
        fh.seek(offset)
        raw = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype, count=count)

    data = raw.astype(np.float64)
    if hdr["scl_slope"] != 0 and np.isfinite(hdr["scl_slope"]):
        data = data * hdr["scl_slope"] + hdr["scl_inter"]
    spacing = tuple(abs(p) if p else 1.0 for p in hdr["pixdim"][1:4])
    if is_field:
        comps = data.reshape(shape, order="F").transpose(3, 0, 1, 2)
        level = Level.FULL
        if hdr["intent_name"].startswith(FIELD_TAG):
            level = Level(hdr["intent_name"][len(FIELD_TAG):])
        return DisplacementField(comps, spacing, level)
    return Volume(data.reshape(shape, order="F"), spacing)


def _check_writable(shape):
    if any(d > 32767 for d in shape):
        raise ValueError(f"dims {tuple(shape)} exceed the NIfTI-1 int16 limit")


def write_nifti(v, path) -> None:
    """Write a Volume, LabelMap or DisplacementField as float32 NIfTI-1."""
    if isinstance(v, DisplacementField):
        shape = tuple(v.dims) + (3,)
        payload = v.components.transpose(1, 2, 3, 0)
        intent = (FIELD_TAG + v.level.value).encode("ascii")
    else:
        shape = tuple(v.dims)
        payload = v.labels if isinstance(v, LabelMap) else v.data
        intent = b""
    _check_writable(shape)
    hdr = bytearray(VOX_OFFSET)
    e = "<"
    _put(hdr, _SIZEOF_HDR, e, HEADER_SIZE)
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    _put(hdr, _DIM, e, *dim)
    _put(hdr, _INTENT_CODE, e, NIFTI_INTENT_VECTOR if intent else 0)
    _put(hdr, _DATATYPE, e, 16)
    _put(hdr, _BITPIX, e, 32)
    _put(hdr, _PIXDIM, e, 1.0, *v.spacing, 1.0, 1.0, 1.0, 1.0)
    _put(hdr, _VOX_OFFSET, e, float(VOX_OFFSET))
    _put(hdr, _SCL_SLOPE, e, 1.0)
    _put(hdr, _SCL_INTER, e, 0.0)
    _put(hdr, _XYZT_UNITS, e, 2)  # millimetres
    _put(hdr, _INTENT_NAME, e, intent)
    _put(hdr, _MAGIC, e, MAGIC)
    body = np.asarray(payload, dtype="<f4").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(body)


# ---------------------------------------------------------------------------
# raw + sidecar

def _raw_paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def write_raw_json(v, path) -> None:
    """Write ``<name>.json`` metadata and a little-endian float32 ``<name>.bin``."""
    meta_path, bin_path = _raw_paths(path)
    meta = {"dims": list(v.dims), "spacing": list(v.spacing)}
    if isinstance(v, DisplacementField):
        meta.update(kind="field", level=v.level.value)
        payload = v.components
    elif isinstance(v, LabelMap):
        meta.update(kind="labels", num_classes=v.num_classes)
        payload = v.labels
    else:
        meta.update(kind="volume")
        payload = v.data
    # x-fastest within each component
    body = np.asarray(payload, dtype="<f4").reshape(-1, *v.dims).transpose(0, 3, 2, 1)
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    bin_path.write_bytes(np.ascontiguousarray(body).tobytes())


def read_raw_json(path):
    """Inverse of :func:`write_raw_json`."""
    meta_path, bin_path = _raw_paths(path)
    try:
        meta = json.loads(meta_path.read_text())
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(meta.get("spacing", (1.0, 1.0, 1.0)))
        kind = meta.get("kind", "volume")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad sidecar {meta_path}: {exc}") from exc
    ncomp = 3 if kind == "field" else 1
    count = ncomp * int(np.prod(dims))
    if bin_path.stat().st_size != 4 * count:
        raise FormatError(
            f"payload {bin_path} holds {bin_path.stat().st_size // 4} values, "
            f"sidecar implies {count}")
    raw = np.fromfile(bin_path, dtype="<f4", count=count).astype(np.float64)
    data = raw.reshape(ncomp, dims[2], dims[1], dims[0]).transpose(0, 3, 2, 1)
    if kind == "field":
        return DisplacementField(data, spacing, Level(meta.get("level", "full")))
    if kind == "labels":
        return LabelMap(data[0], meta.get("num_classes"), spacing)
    if kind == "volume":
        return Volume(data[0], spacing)
    raise FormatError(f"unknown kind {kind!r} in {meta_path}")


def read_any(path):
    """Dispatch on extension: ``.nii`` or raw sidecar (``.json``/``.bin``)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".nii":
        return read_nifti(path)
    if suffix in (".json", ".bin"):
        return read_raw_json(path)
    if str(path).lower().endswith(".nii.gz"):
        raise FormatError("compressed NIfTI is not supported; decompress to .nii first")
    raise FormatError(f"unrecognized file type: {path}")


def write_any(v, path) -> None:
    if Path(path).suffix.lower() in (".json", ".bin"):
        write_raw_json(v, path)
    else:
        write_nifti(v, path)


def as_labels(v, num_classes=None) -> LabelMap:
    """Interpret a loaded volume as an integer label map."""
    if isinstance(v, LabelMap):
        return v
    return LabelMap(np.rint(v.data).astype(np.int64), num_classes, v.spacing)
