import gzip
import struct

import numpy as np
import pytest

from conftest import random_scalar_volume
from ctview.errors import NiftiError
from ctview.nifti import (parse_nifti, read_nifti_file, write_nifti,
                          write_nifti_file)
from ctview.volume import LabelVolume, ScalarVolume


def handcrafted_int16_file() -> tuple[bytes, np.ndarray]:
    """2x2x2 int16 single-file volume laid out field-by-field with struct,
    independent of the package writer."""
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)                  # sizeof_hdr
    struct.pack_into("<8h", hdr, 40, 3, 2, 2, 2, 1, 1, 1, 1)  # dim
    struct.pack_into("<h", hdr, 70, 4)                   # datatype int16
    struct.pack_into("<h", hdr, 72, 16)                  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, 1.5, 2.0, 2.5, 0, 0, 0, 0)  # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)              # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)                # scl_inter
    struct.pack_into("<h", hdr, 252, 1)                  # qform_code
    struct.pack_into("<3f", hdr, 268, 5.0, -3.0, 7.0)    # qoffset x/y/z
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")        # magic
    values = np.array([[[-1000, -500], [0, 40]],
                       [[100, 250], [-120, 999]]], dtype=np.int16)
    payload = values.tobytes(order="F")
    return bytes(hdr) + b"\x00" * 4 + payload, values


class TestParse:
    def test_handcrafted_fixture(self):
        blob, values = handcrafted_int16_file()
        vol = parse_nifti(blob)
        assert isinstance(vol, ScalarVolume)
        assert vol.dims == (2, 2, 2)
        assert vol.spacing == (1.5, 2.0, 2.5)
        assert vol.origin == (5.0, -3.0, 7.0)
        np.testing.assert_array_equal(vol.data, values.astype(np.float32))

    def test_scl_scaling_applied(self):
        blob, values = handcrafted_int16_file()
        buf = bytearray(blob)
        struct.pack_into("<f", buf, 112, 2.0)   # slope
        struct.pack_into("<f", buf, 116, -10.0)  # intercept
        vol = parse_nifti(bytes(buf))
        np.testing.assert_array_equal(vol.data,
                                      (values.astype(np.float64) * 2 - 10).astype(np.float32))

    def test_byte_swapped_twin_parses_identically(self):
        blob, _ = handcrafted_int16_file()
        native = parse_nifti(blob)

        hdr = bytearray(348)
        struct.pack_into(">i", hdr, 0, 348)
        struct.pack_into(">8h", hdr, 40, 3, 2, 2, 2, 1, 1, 1, 1)
        struct.pack_into(">h", hdr, 70, 4)
        struct.pack_into(">h", hdr, 72, 16)
        struct.pack_into(">8f", hdr, 76, 1.0, 1.5, 2.0, 2.5, 0, 0, 0, 0)
        struct.pack_into(">f", hdr, 108, 352.0)
        struct.pack_into(">f", hdr, 112, 1.0)
        struct.pack_into(">h", hdr, 252, 1)
        struct.pack_into(">3f", hdr, 268, 5.0, -3.0, 7.0)
        struct.pack_into(">4s", hdr, 344, b"n+1\x00")
        values = np.array([[[-1000, -500], [0, 40]],
                           [[100, 250], [-120, 999]]], dtype=">i2")
        swapped = parse_nifti(bytes(hdr) + b"\x00" * 4 + values.tobytes(order="F"))
        np.testing.assert_array_equal(swapped.data, native.data)
        assert swapped.spacing == native.spacing

    def test_bad_magic(self):
        blob, _ = handcrafted_int16_file()
        buf = bytearray(blob)
        struct.pack_into("<4s", buf, 344, b"BAD\x00")
        with pytest.raises(NiftiError, match="magic"):
            parse_nifti(bytes(buf))

    def test_truncated_payload(self):
        blob, _ = handcrafted_int16_file()
        with pytest.raises(NiftiError, match="truncated"):
            parse_nifti(blob[:-4])

    def test_unsupported_datatype(self):
        blob, _ = handcrafted_int16_file()
        buf = bytearray(blob)
        struct.pack_into("<h", buf, 70, 128)  # RGB24
        with pytest.raises(NiftiError, match="datatype"):
            parse_nifti(bytes(buf))

    def test_wrong_dim0(self):
        blob, _ = handcrafted_int16_file()
        buf = bytearray(blob)
        struct.pack_into("<h", buf, 40, 4)
        with pytest.raises(NiftiError, match="dim"):
            parse_nifti(bytes(buf))

    def test_paired_layout_rejected(self):
        blob, _ = handcrafted_int16_file()
        buf = bytearray(blob)
        struct.pack_into("<4s", buf, 344, b"ni1\x00")
        with pytest.raises(NiftiError, match="paired"):
            parse_nifti(bytes(buf))

    def test_rotated_orientation_rejected(self):
        blob, _ = handcrafted_int16_file()
        buf = bytearray(blob)
        struct.pack_into("<h", buf, 254, 1)  # sform_code
        struct.pack_into("<4f", buf, 280, 0.0, 1.0, 0.0, 0.0)  # srow_x with rotation
        struct.pack_into("<4f", buf, 296, 1.0, 0.0, 0.0, 0.0)
        struct.pack_into("<4f", buf, 312, 0.0, 0.0, 1.0, 0.0)
        with pytest.raises(NiftiError, match="axis-aligned"):
            parse_nifti(bytes(buf))

    def test_gzip_transparent(self):
        blob, values = handcrafted_int16_file()
        vol = parse_nifti(gzip.compress(blob))
        np.testing.assert_array_equal(vol.data, values.astype(np.float32))


class TestWrite:
    def test_single_value_layout(self):
        vol = ScalarVolume(np.full((1, 1, 1), 7.0, dtype=np.float32), (1, 1, 1))
        blob = write_nifti(vol)
        assert len(blob) == 352 + 4
        assert struct.unpack_from("<f", blob, 348 + 4)[0] == 7.0
        assert blob[344:348] == b"n+1\x00"
        assert struct.unpack_from("<f", blob, 108)[0] == 352.0

    def test_round_trip_scalar(self, rng):
        v = random_scalar_volume(rng, shape=(4, 3, 5), spacing=(0.7, 0.9, 2.0))
        out = parse_nifti(write_nifti(v))
        assert isinstance(out, ScalarVolume)
        assert out.data.tobytes() == v.data.tobytes()
        # spacing travels through float32 pixdim fields
        assert out.spacing == pytest.approx(v.spacing, rel=1e-7)

    def test_round_trip_label(self, rng):
        labels = rng.integers(0, 3, size=(4, 5, 6)).astype(np.uint8)
        lv = LabelVolume(labels, (1.0, 1.0, 1.0), origin=(1.0, 2.0, 3.0))
        out = parse_nifti(write_nifti(lv))
        assert isinstance(out, LabelVolume)
        np.testing.assert_array_equal(out.labels, labels)
        assert out.origin == (1.0, 2.0, 3.0)

    def test_round_trip_from_all_parse_datatypes(self):
        # files in every supported datatype parse, rewrite, and re-parse
        # to identical values
        blob, _ = handcrafted_int16_file()
        for code, fmt in [(2, "u1"), (4, "i2"), (8, "i4"), (16, "f4"), (64, "f8")]:
            buf = bytearray(blob[:352])
            struct.pack_into("<h", buf, 70, code)
            dt = np.dtype(f"<{fmt}")
            struct.pack_into("<h", buf, 72, dt.itemsize * 8)
            values = np.arange(8).reshape(2, 2, 2).astype(dt)
            first = parse_nifti(bytes(buf) + values.tobytes(order="F"))
            second = parse_nifti(write_nifti(first))
            assert type(second) is type(first)
            a = first.data if isinstance(first, ScalarVolume) else first.labels
            b = second.data if isinstance(second, ScalarVolume) else second.labels
            assert a.tobytes() == b.tobytes()

    def test_golden_bytes_stable(self):
        rng = np.random.default_rng(42)
        data = rng.uniform(-1000, 400, size=(3, 3, 3)).astype(np.float32)
        vol = ScalarVolume(data, (1.0, 1.0, 1.5), origin=(-10.0, 2.0, 0.5))
        blob = write_nifti(vol)
        assert blob == write_nifti(vol)
        # frozen fingerprint of the reference writer's output
        import hashlib
        assert hashlib.sha256(blob).hexdigest() == GOLDEN_SHA256

    def test_file_round_trip_gz(self, tmp_path, rng):
        v = random_scalar_volume(rng, shape=(3, 3, 3))
        p = tmp_path / "vol.nii.gz"
        write_nifti_file(v, p)
        out = read_nifti_file(p)
        assert out.data.tobytes() == v.data.tobytes()


GOLDEN_SHA256 = "82d6d84f3eb68b9bf8c8f539a04dfa1adad5da96c3fbc9efa873c94d8cdf3d0d"
