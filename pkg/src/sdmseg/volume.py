"""Voxel-grid containers and on-disk formats.

Arrays are indexed ``data[x, y, z]``. On disk the payload is written with
x varying fastest, i.e. ``linear = x + nx * (y + ny * z)``, which is what
``np.ravel(order="F")`` produces for such an array.

Two formats are handled:

* the native pair ``<name>.json`` + ``<name>.raw`` (read/write), and
* a small uncompressed NIfTI-1 subset (read only).
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, UnsupportedFormatError, VolumeIOError

__all__ = [
    "Spacing",
    "LabelVolume",
    "ScalarVolume",
    "SdmVolume",
    "VolumeHeader",
    "one_hot",
    "linear_index",
    "coords_from_index",
    "read_volume",
    "write_volume",
    "load_labels",
    "load_scalar",
    "save_volume",
    "read_nifti_subset",
]

AXIS_ORDER = "x-fastest"
FORMAT_VERSION = "1"

_DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4")}


@dataclass(frozen=True)
class Spacing:
    """Physical voxel edge lengths in millimetres."""

    dx: float = 1.0
    dy: float = 1.0
    dz: float = 1.0

    def __post_init__(self):
        for name in ("dx", "dy", "dz"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"spacing {name} must be positive and finite, got {v!r}")

    @classmethod
    def of(cls, value) -> "Spacing":
        if isinstance(value, Spacing):
            return value
        if value is None:
            return cls()
        dx, dy, dz = (float(v) for v in value)
        return cls(dx, dy, dz)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_3d(data: np.ndarray, what: str):
    if data.ndim != 3:
        raise DomainError(f"{what} must be 3-dimensional, got shape {data.shape}")


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer class labels on a grid; 0 is background."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=Spacing)
    num_classes: int = 1

    def __post_init__(self):
        data = np.asarray(self.data)
        _check_3d(data, "label data")
        if data.size and (np.any(data < 0) or data.max() > 255):
            raise DomainError("labels must lie in [0, 255]")
        if self.num_classes < 1:
            raise DomainError(f"num_classes must be >= 1, got {self.num_classes}")
        if data.size and int(data.max()) > self.num_classes:
            raise DomainError(
                f"label {int(data.max())} exceeds num_classes={self.num_classes}"
            )
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8)))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def mask(self, class_id: int) -> np.ndarray:
        return self.data == class_id


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Real-valued data on a grid (images, probabilities, distance maps)."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=Spacing)

    def __post_init__(self):
        data = np.asarray(self.data)
        _check_3d(data, "scalar data")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise DomainError("scalar volume contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)


@dataclass(frozen=True, eq=False)
class SdmVolume:
    """Signed distance maps for classes ``1..N`` stacked as ``(N, nx, ny, nz)``.

    Negative values lie inside the organ. When ``normalized`` is true each
    channel lies in [-1, 1] and ``pos_scale``/``neg_scale`` hold the divisors
    that were applied to the positive and negative sides.
    """

    data: np.ndarray
    spacing: Spacing = field(default_factory=Spacing)
    normalized: bool = False
    pos_scale: tuple[float, ...] = ()
    neg_scale: tuple[float, ...] = ()
    degenerate: tuple[bool, ...] = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise DomainError(f"SDM data must be (N, nx, ny, nz), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("SDM contains non-finite values")
        if self.normalized and data.size and np.abs(data).max() > 1.0:
            raise DomainError("normalized SDM values must lie in [-1, 1]")
        n = data.shape[0]
        for name in ("pos_scale", "neg_scale"):
            v = tuple(float(s) for s in getattr(self, name)) or (1.0,) * n
            if len(v) != n:
                raise DomainError(f"{name} needs {n} entries, got {len(v)}")
            object.__setattr__(self, name, v)
        deg = tuple(bool(d) for d in self.degenerate) or (False,) * n
        object.__setattr__(self, "degenerate", deg)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    @property
    def num_classes(self) -> int:
        return int(self.data.shape[0])

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[1:])

    @property
    def volumes(self) -> list[ScalarVolume]:
        return [ScalarVolume(c, self.spacing) for c in self.data]

    def denormalized(self) -> np.ndarray:
        if not self.normalized:
            return np.array(self.data)
        out = np.empty_like(self.data)
        for i, (c, ps, ns) in enumerate(zip(self.data, self.pos_scale, self.neg_scale)):
            out[i] = np.where(c > 0, c * ps, c * ns)
        return out


@dataclass(frozen=True)
class VolumeHeader:
    dims: tuple[int, int, int]
    spacing: Spacing = field(default_factory=Spacing)
    dtype: str = "f32"
    order: str = AXIS_ORDER

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise VolumeIOError(f"unknown element type {self.dtype!r}", field="dtype")
        if self.order != AXIS_ORDER:
            raise VolumeIOError(f"unsupported axis order {self.order!r}", field="order")
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise VolumeIOError(f"dims must be three positive integers, got {self.dims!r}", field="dims")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def payload_bytes(self) -> int:
        return self.num_voxels * _DTYPES[self.dtype].itemsize

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing_mm": list(self.spacing.as_tuple()),
            "dtype": self.dtype,
            "order": self.order,
        }


def one_hot(labels: LabelVolume, class_id: int) -> ScalarVolume:
    """Binary float mask of ``class_id``; 0 selects the background."""
    if not 0 <= class_id <= labels.num_classes:
        raise DomainError(f"class_id {class_id} outside [0, {labels.num_classes}]")
    return ScalarVolume((labels.data == class_id).astype(np.float64), labels.spacing)


def linear_index(dims, x, y, z):
    nx, ny, nz = dims
    return x + nx * (y + ny * z)


def coords_from_index(dims, index):
    nx, ny, _ = dims
    x = index % nx
    y = (index // nx) % ny
    z = index // (nx * ny)
    return x, y, z


# -- native format -----------------------------------------------------------

def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def _atomic_write(path: Path, blob: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_volume(path, data: np.ndarray, spacing=None, dtype: str | None = None) -> VolumeHeader:
    """Write ``data[x, y, z]`` as ``<path>.json`` + ``<path>.raw``.

    ``dtype`` defaults to ``"u8"`` for integer/bool arrays and ``"f32"``
    otherwise. Both files are written to temporaries and renamed into place.
    """
    data = np.asarray(data)
    if data.ndim != 3:
        raise VolumeIOError(f"expected a 3-D array, got shape {data.shape}", field="dims")
    if dtype is None:
        dtype = "f32" if np.issubdtype(data.dtype, np.floating) else "u8"
    header = VolumeHeader(dims=data.shape, spacing=Spacing.of(spacing), dtype=dtype)
    arr = data.astype(_DTYPES[dtype])
    if dtype == "f32" and not np.all(np.isfinite(arr)):
        raise VolumeIOError("float payload contains non-finite values", field="payload")
    if dtype == "u8" and not np.array_equal(arr, data):
        raise VolumeIOError("values do not fit in uint8", field="dtype")
    hpath, rpath = _paths(path)
    hpath.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(rpath, arr.ravel(order="F").tobytes())
    _atomic_write(hpath, (json.dumps(header.to_json(), indent=2) + "\n").encode())
    return header


def _parse_header(obj) -> VolumeHeader:
    if not isinstance(obj, dict):
        raise VolumeIOError("header must be a JSON object", field="header")
    for key in ("dims", "spacing_mm", "dtype", "order"):
        if key not in obj:
            raise VolumeIOError(f"header is missing {key!r}", field=key)
    try:
        dims = tuple(int(d) for d in obj["dims"])
    except (TypeError, ValueError):
        raise VolumeIOError("dims must be a list of integers", field="dims") from None
    if len(dims) != 3:
        raise VolumeIOError("dims must have three entries", field="dims")
    try:
        spacing = Spacing.of(obj["spacing_mm"])
    except (TypeError, ValueError) as exc:
        raise VolumeIOError(f"bad spacing_mm: {exc}", field="spacing_mm") from None
    return VolumeHeader(dims=dims, spacing=spacing, dtype=obj["dtype"], order=obj["order"])


def read_volume(path) -> tuple[VolumeHeader, np.ndarray]:
    """Read a native volume; returns the header and a ``(nx, ny, nz)`` array."""
    hpath, rpath = _paths(path)
    try:
        header = _parse_header(json.loads(hpath.read_text()))
    except json.JSONDecodeError as exc:
        raise VolumeIOError(f"{hpath}: invalid JSON ({exc})", field="header") from None
    blob = rpath.read_bytes()
    if len(blob) != header.payload_bytes:
        n_elem = len(blob) / _DTYPES[header.dtype].itemsize
        raise VolumeIOError(
            f"{rpath}: payload holds {n_elem:g} elements but dims {header.dims} "
            f"require {header.num_voxels}",
            field="dims",
        )
    flat = np.frombuffer(blob, dtype=_DTYPES[header.dtype])
    if header.dtype == "f32" and not np.all(np.isfinite(flat)):
        raise VolumeIOError(f"{rpath}: float payload contains non-finite values", field="payload")
    data = flat.reshape(header.dims, order="F").astype(flat.dtype.newbyteorder("="))
    return header, data


def load_labels(path, num_classes: int | None = None) -> LabelVolume:
    header, data = read_volume(path)
    if header.dtype != "u8":
        raise VolumeIOError("label volumes must be stored as u8", field="dtype")
    if num_classes is None:
        num_classes = max(1, int(data.max()))
    return LabelVolume(data, header.spacing, num_classes)


def load_scalar(path) -> ScalarVolume:
    header, data = read_volume(path)
    return ScalarVolume(data.astype(np.float32), header.spacing)


def save_volume(path, volume) -> VolumeHeader:
    if isinstance(volume, LabelVolume):
        return write_volume(path, volume.data, volume.spacing, "u8")
    return write_volume(path, volume.data, volume.spacing, "f32")


# -- NIfTI-1 subset ----------------------------------------------------------

_NIFTI_TYPES = {2: np.dtype("u1"), 4: np.dtype("i2"), 16: np.dtype("f4")}


def read_nifti_subset(path) -> tuple[VolumeHeader, np.ndarray]:
    """Read an uncompressed single-file (``n+1``) or paired (``ni1``) NIfTI-1.

    Only uint8, int16 and float32 bodies are accepted; int16 is widened to
    float32. Orientation beyond ``pixdim`` is ignored.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 348:
        raise UnsupportedFormatError(f"{path}: shorter than a NIfTI-1 header", field="sizeof_hdr")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == 348:
            break
    else:
        raise UnsupportedFormatError(f"{path}: sizeof_hdr is not 348", field="sizeof_hdr")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise UnsupportedFormatError(f"{path}: bad magic {magic!r}", field="magic")
    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype = struct.unpack(endian + "h", raw[70:72])[0]
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = struct.unpack(endian + "f", raw[108:112])[0]
    if datatype not in _NIFTI_TYPES:
        raise UnsupportedFormatError(f"{path}: unsupported datatype code {datatype}", field="datatype")
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise UnsupportedFormatError(f"{path}: dim[0]={ndim} is invalid", field="dim")
    shape = [max(1, d) for d in dim[1 : 1 + ndim]] + [1] * max(0, 3 - ndim)
    if any(d != 1 for d in shape[3:]):
        raise UnsupportedFormatError(f"{path}: only 3-D volumes are supported", field="dim")
    dims = tuple(shape[:3])
    spacing = Spacing(*(float(abs(p)) if p else 1.0 for p in pixdim[1:4]))

    if magic == b"n+1\x00":
        body, offset = raw, int(vox_offset)
    else:
        body, offset = path.with_suffix(".img").read_bytes(), 0
    dt = _NIFTI_TYPES[datatype].newbyteorder(endian)
    n = dims[0] * dims[1] * dims[2]
    if len(body) < offset + n * dt.itemsize:
        raise VolumeIOError(f"{path}: image body is truncated", field="dims")
    flat = np.frombuffer(body, dtype=dt, count=n, offset=offset)
    data = flat.reshape(dims, order="F")
    if datatype == 2:
        return VolumeHeader(dims, spacing, "u8"), data.astype(np.uint8)
    data = data.astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise VolumeIOError(f"{path}: float payload contains non-finite values", field="payload")
    return VolumeHeader(dims, spacing, "f32"), data
