"""Reader/writer for a subset of the MetaImage format (.mhd/.raw and .mha).

Supported header keys: ObjectType=Image, NDims in {3, 4}, DimSize,
ElementSpacing, ElementType, ElementNumberOfChannels, ElementDataFile.
Payloads are uncompressed little-endian.

Displacement fields are written the way ITK writes vector images:
``NDims = 3`` with ``ElementNumberOfChannels = 3`` so the channel is the
fastest-varying index.  ``NDims = 4`` files whose last DimSize is 3 (channel
slowest) are accepted on read.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InputError
from .volume import DisplacementField, LabelMap, Volume

ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}

_TRUE = {"true", "1", "yes"}


def _parse_header(path: Path):
    """Return the header dict and the bytes following ElementDataFile."""
    raw = path.read_bytes()
    header = {}
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise InputError(f"{path}: malformed header (no ElementDataFile)")
        line = raw[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}: malformed header line {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            break
    return header, raw[pos:]


def _read_array(path) -> tuple[np.ndarray, tuple, int]:
    """Read a MetaImage file.

    Returns the array indexed ``[i, j, k]`` (plus a trailing channel axis for
    multi-channel data), the spacing, and the channel count.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    header, tail = _parse_header(path)

    if header.get("ObjectType", "Image") != "Image":
        raise InputError(f"{path}: unsupported ObjectType {header['ObjectType']!r}")
    for key in ("BinaryDataByteOrderMSB", "ElementByteOrderMSB"):
        if header.get(key, "False").lower() in _TRUE:
            raise InputError(f"{path}: big-endian payloads are not supported")
    if header.get("CompressedData", "False").lower() in _TRUE:
        raise InputError(f"{path}: compressed payloads are not supported")

    try:
        ndims = int(header["NDims"])
        dims = [int(s) for s in header["DimSize"].split()]
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed header ({exc})") from None
    if ndims not in (3, 4):
        raise InputError(f"{path}: unsupported dimensionality NDims={ndims}")
    if len(dims) != ndims or min(dims) < 1:
        raise InputError(f"{path}: DimSize {dims} does not match NDims={ndims}")

    try:
        spacing = [float(s) for s in header.get("ElementSpacing", " ".join(["1"] * ndims)).split()]
    except ValueError:
        raise InputError(f"{path}: malformed ElementSpacing") from None
    if len(spacing) != ndims:
        raise InputError(f"{path}: ElementSpacing has {len(spacing)} entries, expected {ndims}")

    etype = header.get("ElementType")
    if etype not in ELEMENT_TYPES:
        raise InputError(f"{path}: unsupported element type {etype!r}")
    dtype = ELEMENT_TYPES[etype]

    try:
        channels = int(header.get("ElementNumberOfChannels", "1"))
    except ValueError:
        raise InputError(f"{path}: malformed ElementNumberOfChannels") from None
    if channels < 1:
        raise InputError(f"{path}: invalid channel count {channels}")

    data_file = header.get("ElementDataFile")
    if data_file is None:
        raise InputError(f"{path}: header lacks ElementDataFile")
    if data_file == "LOCAL":
        payload = tail
    elif data_file.upper() == "LIST" or "%" in data_file:
        raise InputError(f"{path}: multi-file payloads are not supported")
    else:
        raw_path = path.parent / data_file
        if not raw_path.is_file():
            raise InputError(f"{raw_path}: raw payload file not found")
        payload = raw_path.read_bytes()

    count = int(np.prod(dims)) * channels
    if len(payload) != count * dtype.itemsize:
        raise InputError(
            f"{path}: payload size mismatch (expected {count * dtype.itemsize} bytes, got {len(payload)})"
        )
    flat = np.frombuffer(payload, dtype=dtype, count=count)

    if ndims == 3:
        if channels == 1:
            arr = flat.reshape(dims, order="F")
        else:
            arr = flat.reshape([channels] + dims, order="F")
            arr = np.moveaxis(arr, 0, -1)
        return arr, tuple(spacing), channels

    # 4D: last axis is the channel axis (slowest varying)
    if channels != 1:
        raise InputError(f"{path}: 4D multi-channel images are not supported")
    arr = flat.reshape(dims, order="F")
    return arr, tuple(spacing[:3]), dims[3]


def _write_array(path, arr: np.ndarray, spacing, met_type: str, channels: int = 1):
    path = Path(path)
    if path.suffix.lower() not in (".mha", ".mhd"):
        raise InputError(f"{path}: expected a .mha or .mhd file name")
    dtype = ELEMENT_TYPES[met_type]
    dims = arr.shape[:3]
    if channels == 1:
        flat = arr.ravel(order="F")
    else:
        flat = np.moveaxis(arr, -1, 0).ravel(order="F")
    payload = np.ascontiguousarray(flat.astype(dtype, copy=False)).tobytes()

    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "DimSize = " + " ".join(str(int(n)) for n in dims),
        "ElementSpacing = " + " ".join(repr(float(s)) for s in spacing),
    ]
    if channels != 1:
        lines.append(f"ElementNumberOfChannels = {channels}")
    lines.append(f"ElementType = {met_type}")

    try:
        if path.suffix.lower() == ".mha":
            lines.append("ElementDataFile = LOCAL")
            path.write_bytes(("\n".join(lines) + "\n").encode("ascii") + payload)
        else:
            raw_path = path.with_suffix(".raw")
            lines.append(f"ElementDataFile = {raw_path.name}")
            path.write_text("\n".join(lines) + "\n", encoding="ascii")
            raw_path.write_bytes(payload)
    except OSError as exc:
        raise InputError(f"{path}: cannot write ({exc.strerror})") from None


def read_volume(path) -> Volume:
    arr, spacing, channels = _read_array(path)
    if channels != 1 or arr.ndim != 3:
        raise InputError(f"{path}: expected a scalar 3D image, found {channels} channels")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite samples")
    return Volume(arr.astype(np.float64), spacing)


def write_volume(v: Volume, path, element_type: str = "MET_DOUBLE") -> None:
    """Write a volume; the default MET_DOUBLE keeps the payload bit-exact."""
    if not isinstance(v, Volume):
        raise InputError("write_volume expects a Volume")
    if element_type not in ELEMENT_TYPES:
        raise InputError(f"unsupported element type {element_type!r}")
    if not np.all(np.isfinite(v.data)):
        raise InputError("refusing to write a volume with non-finite samples")
    _write_array(path, v.data, v.spacing, element_type)


def read_field(path) -> DisplacementField:
    arr, spacing, channels = _read_array(path)
    if channels != 3:
        raise InputError(f"{path}: displacement fields need 3 channels, found {channels}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite displacement components")
    return DisplacementField(arr.astype(np.float64), spacing)


def write_field(field: DisplacementField, path, element_type: str = "MET_DOUBLE") -> None:
    if element_type not in ("MET_FLOAT", "MET_DOUBLE"):
        raise InputError("displacement fields must be written as MET_FLOAT or MET_DOUBLE")
    if not np.all(np.isfinite(field.data)):
        raise InputError("refusing to write a field with non-finite components")
    _write_array(path, field.data, field.spacing, element_type, channels=3)


def read_labels(path) -> LabelMap:
    arr, spacing, channels = _read_array(path)
    if channels != 1 or arr.ndim != 3:
        raise InputError(f"{path}: expected a scalar 3D label map")
    return LabelMap(arr, spacing)


def write_labels(labels: LabelMap, path) -> None:
    top = int(labels.data.max()) if labels.data.size else 0
    if top <= np.iinfo(np.uint8).max:
        met = "MET_UCHAR"
    elif top <= np.iinfo(np.uint16).max:
        met = "MET_USHORT"
    else:
        raise InputError(f"label value {top} does not fit the supported integer types")
    _write_array(path, labels.data, labels.spacing, met)
