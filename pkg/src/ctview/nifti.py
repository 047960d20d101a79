"""NIfTI-1 volume reading and writing.

Only the single-file layout with an axis-aligned orientation is supported;
that covers scans exported by the usual conversion tools and the masks this
package writes itself. Gzipped streams are decompressed transparently.
"""

from __future__ import annotations

import gzip

import numpy as np

from .errors import NiftiError
from .volume import LabelVolume, ScalarVolume

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4-byte extension flag
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
INTENT_LABEL = 1002  # marks uint8 payloads as segmentation labels

_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64}


def _header_dtype(bo: str) -> np.dtype:
    return np.dtype([
        ("sizeof_hdr", f"{bo}i4"), ("data_type", "S10"), ("db_name", "S18"),
        ("extents", f"{bo}i4"), ("session_error", f"{bo}i2"),
        ("regular", "S1"), ("dim_info", "u1"),
        ("dim", f"{bo}i2", (8,)),
        ("intent_p1", f"{bo}f4"), ("intent_p2", f"{bo}f4"), ("intent_p3", f"{bo}f4"),
        ("intent_code", f"{bo}i2"), ("datatype", f"{bo}i2"),
        ("bitpix", f"{bo}i2"), ("slice_start", f"{bo}i2"),
        ("pixdim", f"{bo}f4", (8,)),
        ("vox_offset", f"{bo}f4"), ("scl_slope", f"{bo}f4"), ("scl_inter", f"{bo}f4"),
        ("slice_end", f"{bo}i2"), ("slice_code", "u1"), ("xyzt_units", "u1"),
        ("cal_max", f"{bo}f4"), ("cal_min", f"{bo}f4"),
        ("slice_duration", f"{bo}f4"), ("toffset", f"{bo}f4"),
        ("glmax", f"{bo}i4"), ("glmin", f"{bo}i4"),
        ("descrip", "S80"), ("aux_file", "S24"),
        ("qform_code", f"{bo}i2"), ("sform_code", f"{bo}i2"),
        ("quatern_b", f"{bo}f4"), ("quatern_c", f"{bo}f4"), ("quatern_d", f"{bo}f4"),
        ("qoffset_x", f"{bo}f4"), ("qoffset_y", f"{bo}f4"), ("qoffset_z", f"{bo}f4"),
        ("srow_x", f"{bo}f4", (4,)), ("srow_y", f"{bo}f4", (4,)), ("srow_z", f"{bo}f4", (4,)),
        ("intent_name", "S16"), ("magic", "S4"),
    ])


assert _header_dtype("<").itemsize == HEADER_SIZE


def _maybe_decompress(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except OSError as e:
            raise NiftiError(f"bad gzip stream: {e}") from e
    return data


def _axis_aligned_origin(hdr) -> tuple[float, float, float]:
    """Extract the world origin, rejecting rotated orientation matrices."""
    if hdr["sform_code"] > 0:
        rows = np.array([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]], dtype=np.float64)
        rot = rows[:, :3]
        if np.abs(rot - np.diag(np.diag(rot))).max() > 1e-4:
            raise NiftiError("orientation matrix is not axis-aligned; "
                             "reorient the volume before loading")
        return (float(rows[0, 3]), float(rows[1, 3]), float(rows[2, 3]))
    if hdr["qform_code"] > 0:
        quat = (float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"]))
        if max(abs(q) for q in quat) > 1e-4:
            raise NiftiError("quaternion orientation is not axis-aligned; "
                             "reorient the volume before loading")
        return (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
    return (0.0, 0.0, 0.0)


def parse_nifti(data: bytes) -> ScalarVolume | LabelVolume:
    """Parse a NIfTI-1 byte stream into a volume.

    Endianness is auto-detected from the header size field. uint8 payloads
    carrying the label intent code load as :class:`LabelVolume`, everything
    else as :class:`ScalarVolume` (with slope/intercept scaling applied).
    """
    data = _maybe_decompress(data)
    if len(data) < HEADER_SIZE:
        raise NiftiError(f"truncated header: {len(data)} bytes, need {HEADER_SIZE}")

    bo = None
    for candidate in ("<", ">"):
        size = int(np.frombuffer(data, dtype=f"{candidate}i4", count=1)[0])
        if size == HEADER_SIZE:
            bo = candidate
            break
    if bo is None:
        raise NiftiError("header size field is not 348 in either byte order")

    hdr = np.frombuffer(data[:HEADER_SIZE], dtype=_header_dtype(bo))[0]

    magic = data[HEADER_SIZE - 4:HEADER_SIZE]  # raw bytes; numpy strips NULs
    if magic == MAGIC_PAIR:
        raise NiftiError("paired header/.img layout is not supported; "
                         "convert to a single-file volume")
    if magic != MAGIC_SINGLE:
        raise NiftiError(f"bad magic {magic!r}")

    if int(hdr["dim"][0]) != 3:
        raise NiftiError(f"expected a 3D volume, got dim[0]={int(hdr['dim'][0])}")

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise NiftiError(f"unsupported datatype code {code}")
    dt = np.dtype(f"{bo}{_DTYPES[code]}")

    nx, ny, nz = (int(d) for d in hdr["dim"][1:4])
    if min(nx, ny, nz) < 1:
        raise NiftiError(f"non-positive dimensions ({nx}, {ny}, {nz})")
    spacing = tuple(float(s) for s in hdr["pixdim"][1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise NiftiError(f"non-positive voxel spacing {spacing}")
    origin = _axis_aligned_origin(hdr)

    offset = int(round(float(hdr["vox_offset"])))
    if offset < HEADER_SIZE:
        raise NiftiError(f"vox_offset {offset} overlaps the header")
    nvox = nx * ny * nz
    need = offset + nvox * dt.itemsize
    if len(data) < need:
        raise NiftiError(f"truncated payload: need {need} bytes, have {len(data)}")

    flat = np.frombuffer(data, dtype=dt, count=nvox, offset=offset)
    arr = flat.reshape((nx, ny, nz), order="F")

    if code == 2 and int(hdr["intent_code"]) == INTENT_LABEL:
        return LabelVolume(arr.copy(), spacing, origin)

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    values = arr.astype(np.float64)
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        values = values * slope + inter
    if code == 16 and (slope == 0.0 or (slope == 1.0 and inter == 0.0)):
        # preserve float32 payloads bit-exactly
        return ScalarVolume(arr.copy(), spacing, origin)
    return ScalarVolume(values.astype(np.float32), spacing, origin)


def write_nifti(vol: ScalarVolume | LabelVolume) -> bytes:
    """Serialise a volume as a little-endian single-file NIfTI-1 blob.

    Scalars are written as float32, labels as uint8 with the label intent
    code; output is deterministic byte-for-byte.
    """
    is_label = isinstance(vol, LabelVolume)
    code = 2 if is_label else 16
    payload_arr = vol.labels if is_label else vol.data

    hdr = np.zeros((), dtype=_header_dtype("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.zeros(8, dtype=np.int16)
    dim[0] = 3
    dim[1:4] = vol.dims
    dim[4:] = 1
    hdr["dim"] = dim
    if is_label:
        hdr["intent_code"] = INTENT_LABEL
    hdr["datatype"] = code
    hdr["bitpix"] = _BITPIX[code]
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = vol.spacing
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = float(VOX_OFFSET)
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["qform_code"] = 1
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = vol.origin
    hdr["magic"] = MAGIC_SINGLE

    payload = payload_arr.astype("<u1" if is_label else "<f4", copy=False)
    return hdr.tobytes() + b"\x00\x00\x00\x00" + payload.tobytes(order="F")


def read_nifti_file(path) -> ScalarVolume | LabelVolume:
    with open(path, "rb") as f:
        return parse_nifti(f.read())


def write_nifti_file(vol: ScalarVolume | LabelVolume, path) -> None:
    blob = write_nifti(vol)
    if str(path).endswith(".gz"):
        blob = gzip.compress(blob, 6, mtime=0)  # fixed mtime keeps bytes reproducible
    with open(path, "wb") as f:
        f.write(blob)
