"""On-disk formats for volumes, masks, ODF fields and streamlines.

Volumes and ODF fields use a small binary container: an ASCII magic line,
one line of compact JSON header, then a raw little-endian payload.  Grid
data is stored x-fastest, i.e. the value at ``(x, y, z)`` sits at flat
index ``x + nx * (y + ny * z)``; in numpy terms that is Fortran order.
Streamlines are plain JSON.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_dims, check_voxel_size
from .exceptions import DomainError, FormatError, SchemaError, SizeMismatchError

VOLUME_MAGIC = b"WMGF-VOL1\n"
ODF_MAGIC = b"WMGF-ODF1\n"

MIN_DIRECTIONS = 98
_UNIT_NORM_TOL = 1e-9
_F64 = np.dtype("<f8")
_U64 = np.dtype("<u8")


def flat_index(coords, dims):
    """Flat x-fastest index of integer grid coordinates (``(..., 3)`` array)."""
    coords = np.asarray(coords, dtype=np.int64)
    nx, ny, _ = dims
    return coords[..., 0] + nx * (coords[..., 1] + ny * coords[..., 2])


def grid_coords(flat, dims):
    """Inverse of :func:`flat_index`."""
    flat = np.asarray(flat, dtype=np.int64)
    nx, ny, _ = dims
    return np.stack([flat % nx, (flat // nx) % ny, flat // (nx * ny)], axis=-1)


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar volume.  ``data`` has shape ``(nx, ny, nz)``."""

    data: np.ndarray
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        check_dims(data.shape, 3)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size_mm", check_voxel_size(self.voxel_size_mm))

    @property
    def dims(self):
        return self.data.shape

    def flat(self):
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class Volume4D:
    """Time series volume.  ``data`` has shape ``(nx, ny, nz, nt)``."""

    data: np.ndarray
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)
    tr_seconds: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        check_dims(data.shape, 4)
        if data.shape[3] < 2:
            raise DomainError(f"Volume4D needs nt >= 2, got nt={data.shape[3]}")
        if not (np.isfinite(self.tr_seconds) and self.tr_seconds > 0):
            raise DomainError(f"tr_seconds must be positive, got {self.tr_seconds}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size_mm", check_voxel_size(self.voxel_size_mm))
        object.__setattr__(self, "tr_seconds", float(self.tr_seconds))

    @property
    def dims(self):
        return self.data.shape

    @property
    def n_frames(self):
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean voxel mask with at least one true voxel."""

    voxels: np.ndarray
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        voxels = np.asarray(self.voxels, dtype=bool)
        check_dims(voxels.shape, 3)
        if not voxels.any():
            raise DomainError("mask has no true voxels")
        object.__setattr__(self, "voxels", voxels)
        object.__setattr__(self, "voxel_size_mm", check_voxel_size(self.voxel_size_mm))

    @property
    def dims(self):
        return self.voxels.shape

    @property
    def flat_indices(self):
        """Flat indices of the true voxels, ascending."""
        return np.flatnonzero(self.voxels.ravel(order="F"))

    def __len__(self):
        return int(self.voxels.sum())


@dataclass(frozen=True, eq=False)
class ODFField:
    """Orientation distribution samples for a set of voxels.

    Parameters
    ----------
    directions : array of shape (n_dirs, 3)
        Unit sampling directions shared by every voxel.
    dims : tuple of 3 ints
        Grid the voxel indices refer to.
    voxel_indices : array of shape (n_voxels,)
        Strictly increasing flat voxel indices.
    values : array of shape (n_voxels, n_dirs)
        Non-negative ODF samples.
    """

    directions: np.ndarray
    dims: tuple
    voxel_indices: np.ndarray
    values: np.ndarray
    _rows: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dirs = np.asarray(self.directions, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[1] != 3:
            raise FormatError(f"directions must have shape (n_dirs, 3), got {dirs.shape}")
        if dirs.shape[0] < MIN_DIRECTIONS:
            raise DomainError(f"need at least {MIN_DIRECTIONS} directions, got {dirs.shape[0]}")
        norms = np.sqrt((dirs**2).sum(axis=1))
        bad = np.flatnonzero(np.abs(norms - 1.0) > _UNIT_NORM_TOL)
        if bad.size:
            raise DomainError(f"direction {bad[0]} has norm {norms[bad[0]]!r}, expected unit norm")
        dims = check_dims(self.dims, 3)
        idx = np.asarray(self.voxel_indices, dtype=np.int64).ravel()
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (idx.size, dirs.shape[0]):
            raise FormatError(f"values must have shape {(idx.size, dirs.shape[0])}, got {vals.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= np.prod(dims)):
            raise DomainError("voxel index outside the grid")
        if np.any(np.diff(idx) <= 0):
            raise FormatError("voxel_indices must be strictly increasing")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise DomainError("ODF values must be finite and non-negative")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_rows", {int(v): r for r, v in enumerate(idx)})

    @property
    def n_dirs(self):
        return self.directions.shape[0]

    def row(self, flat):
        """Row of ``values`` holding voxel ``flat``; ``KeyError`` if absent."""
        try:
            return self._rows[int(flat)]
        except KeyError:
            raise KeyError(f"voxel {int(flat)} has no ODF in this field") from None

    def rows(self, flat):
        """Vectorised :meth:`row`.  Returns -1 for voxels without an ODF."""
        flat = np.asarray(flat, dtype=np.int64)
        pos = np.searchsorted(self.voxel_indices, flat)
        pos = np.clip(pos, 0, max(self.voxel_indices.size - 1, 0))
        hit = self.voxel_indices.size > 0
        found = hit & (self.voxel_indices[pos] == flat) if hit else np.zeros(flat.shape, bool)
        return np.where(found, pos, -1)


@dataclass(frozen=True, eq=False)
class StreamlineSet:
    """Polylines in millimetre coordinates."""

    streamlines: list

    def __post_init__(self):
        lines = []
        for n, pts in enumerate(self.streamlines):
            pts = np.asarray(pts, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise SchemaError(f"streamline {n}: points must be [x, y, z] triples")
            if pts.shape[0] < 2:
                raise SchemaError(f"streamline {n}: needs at least 2 points, got {pts.shape[0]}")
            if not np.all(np.isfinite(pts)):
                raise SchemaError(f"streamline {n}: non-finite coordinate")
            if np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
                raise SchemaError(f"streamline {n}: consecutive duplicate points")
            lines.append(pts)
        object.__setattr__(self, "streamlines", lines)

    def __len__(self):
        return len(self.streamlines)

    def __iter__(self):
        return iter(self.streamlines)


# -- binary container helpers -------------------------------------------------


def _dump_header(header):
    return (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _read_container(path, magic):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(magic):
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    end = blob.find(b"\n", len(magic))
    if end < 0:
        raise FormatError(f"{path}: header line not terminated")
    try:
        header = json.loads(blob[len(magic):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    return header, blob[end + 1:]


def _header_field(header, key, path):
    if key not in header:
        raise FormatError(f"{path}: header missing field '{key}'")
    return header[key]


def _header_ints(header, key, path, length=None):
    value = _header_field(header, key, path)
    if (
        not isinstance(value, list)
        or (length is not None and len(value) != length)
        or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value)
    ):
        raise FormatError(f"{path}: header field '{key}' must be a list of positive integers")
    return tuple(value)


def _header_reals(header, key, path, length):
    value = _header_field(header, key, path)
    if (
        not isinstance(value, list)
        or len(value) != length
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise FormatError(f"{path}: header field '{key}' must be a list of {length} numbers")
    return tuple(float(v) for v in value)


# -- volumes -------------------------------------------------------------------


def write_volume(vol, path):
    """Write a :class:`Volume3D` or :class:`Volume4D`."""
    if isinstance(vol, Volume4D):
        header = {"dims": list(vol.dims), "voxel_size_mm": list(vol.voxel_size_mm),
                  "tr_seconds": vol.tr_seconds}
    elif isinstance(vol, Volume3D):
        header = {"dims": list(vol.dims), "voxel_size_mm": list(vol.voxel_size_mm)}
    else:
        raise TypeError(f"expected Volume3D or Volume4D, got {type(vol).__name__}")
    payload = np.ascontiguousarray(vol.data.ravel(order="F"), dtype=_F64).tobytes()
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(_dump_header(header))
        fh.write(payload)


def read_volume(path):
    """Read a volume file, returning :class:`Volume3D` or :class:`Volume4D`."""
    header, payload = _read_container(path, VOLUME_MAGIC)
    dims = _header_ints(header, "dims", path)
    if len(dims) not in (3, 4):
        raise FormatError(f"{path}: header field 'dims' must have 3 or 4 entries")
    voxel_size = _header_reals(header, "voxel_size_mm", path, 3)
    n = int(np.prod(dims))
    if len(payload) != n * _F64.itemsize:
        raise SizeMismatchError(
            f"{path}: dims {list(dims)} need {n} values, payload holds {len(payload) / _F64.itemsize:g}")
    data = np.frombuffer(payload, dtype=_F64).astype(np.float64).reshape(dims, order="F")
    if len(dims) == 4:
        tr = _header_field(header, "tr_seconds", path)
        if not isinstance(tr, (int, float)) or isinstance(tr, bool):
            raise FormatError(f"{path}: header field 'tr_seconds' must be a number")
        return Volume4D(data, voxel_size, tr)
    return Volume3D(data, voxel_size)


def write_mask(mask, path):
    write_volume(Volume3D(mask.voxels.astype(np.float64), mask.voxel_size_mm), path)


def read_mask(path):
    """Read a 3D volume and treat strictly positive voxels as the mask."""
    vol = read_volume(path)
    if not isinstance(vol, Volume3D):
        raise FormatError(f"{path}: a mask must be a 3D volume")
    return Mask(vol.data > 0, vol.voxel_size_mm)


# -- ODF fields ----------------------------------------------------------------


def write_odf_field(odf, path):
    header = {
        "dims": list(odf.dims),
        "n_dirs": odf.n_dirs,
        "directions": odf.directions.tolist(),
        "n_voxels": int(odf.voxel_indices.size),
    }
    record = np.dtype([("index", _U64), ("values", _F64, (odf.n_dirs,))])
    recs = np.empty(odf.voxel_indices.size, dtype=record)
    recs["index"] = odf.voxel_indices
    recs["values"] = odf.values
    with open(path, "wb") as fh:
        fh.write(ODF_MAGIC)
        fh.write(_dump_header(header))
        fh.write(recs.tobytes())


def read_odf_field(path):
    header, payload = _read_container(path, ODF_MAGIC)
    dims = _header_ints(header, "dims", path, 3)
    n_dirs = _header_field(header, "n_dirs", path)
    n_vox = _header_field(header, "n_voxels", path)
    for key, value in (("n_dirs", n_dirs), ("n_voxels", n_vox)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise FormatError(f"{path}: header field '{key}' must be a non-negative integer")
    dirs = _header_field(header, "directions", path)
    try:
        dirs = np.array(dirs, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError(f"{path}: header field 'directions' must be a list of [x, y, z]") from None
    if dirs.shape != (n_dirs, 3):
        raise FormatError(f"{path}: header field 'directions' has shape {dirs.shape}, expected ({n_dirs}, 3)")
    record = np.dtype([("index", _U64), ("values", _F64, (n_dirs,))])
    if len(payload) != n_vox * record.itemsize:
        raise SizeMismatchError(
            f"{path}: {n_vox} records of {record.itemsize} bytes expected, payload has {len(payload)} bytes")
    recs = np.frombuffer(payload, dtype=record)
    return ODFField(dirs, dims, recs["index"].astype(np.int64), recs["values"].astype(np.float64))


# -- streamlines ---------------------------------------------------------------


def write_streamlines(streamlines, path):
    doc = {"streamlines": [pts.tolist() for pts in streamlines]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def read_streamlines(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("streamlines"), list):
        raise SchemaError(f"{path}: expected an object with a 'streamlines' list")
    lines = []
    for n, pts in enumerate(doc["streamlines"]):
        if not isinstance(pts, list) or not all(
            isinstance(p, list) and len(p) == 3
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)
            for p in pts
        ):
            raise SchemaError(f"{path}: streamline {n} must be a list of [x, y, z] points")
        lines.append(np.array(pts, dtype=np.float64).reshape(-1, 3))
    return StreamlineSet(lines)
