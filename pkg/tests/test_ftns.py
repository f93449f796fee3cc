import io
import struct

import numpy as np
import pytest

from agenet import ftns


class TestRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(), (5,), (3, 4), (2, 3, 4, 5)])
    def test_bit_exact(self, dtype, shape, tmp_path):
        rng = np.random.default_rng(hash((str(dtype), shape)) % 2**32)
        arr = rng.standard_normal(shape).astype(dtype)
        path = tmp_path / "t.ftns"
        ftns.save(path, arr)
        back = ftns.load(path)
        assert back.dtype == arr.dtype
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)

    def test_special_values_survive(self, tmp_path):
        arr = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 1e-45], dtype=np.float32)
        path = tmp_path / "s.ftns"
        ftns.save(path, arr)
        back = ftns.load(path)
        np.testing.assert_array_equal(back.view(np.uint32), arr.view(np.uint32))

    def test_multiple_tensors_in_one_stream(self):
        a = np.arange(6, dtype=np.float32).reshape(2, 3)
        b = np.array(7.5, dtype=np.float64)
        buf = io.BytesIO()
        ftns.write_tensor(buf, a)
        ftns.write_tensor(buf, b)
        buf.seek(0)
        np.testing.assert_array_equal(ftns.read_tensor(buf), a)
        np.testing.assert_array_equal(ftns.read_tensor(buf), b)


class TestHeaderLayout:
    def test_exact_bytes_for_known_tensor(self):
        buf = io.BytesIO()
        ftns.write_tensor(buf, np.array([[1.0, 2.0]], dtype=np.float32))
        raw = buf.getvalue()
        assert raw[:4] == b"FTNS"
        assert struct.unpack("<I", raw[4:8]) == (1,)   # version
        assert raw[8] == 1                             # dtype code float32
        assert raw[9] == 2                             # rank
        assert struct.unpack("<QQ", raw[10:26]) == (1, 2)
        assert raw[26:] == np.array([1.0, 2.0], dtype="<f4").tobytes()

    def test_float64_code_is_two(self):
        buf = io.BytesIO()
        ftns.write_tensor(buf, np.zeros(1, dtype=np.float64))
        assert buf.getvalue()[8] == 2


class TestErrors:
    def test_bad_magic(self):
        with pytest.raises(ftns.FtnsError, match="magic"):
            ftns.read_tensor(io.BytesIO(b"JUNK" + b"\x00" * 32))

    def test_unsupported_version(self):
        buf = io.BytesIO()
        ftns.write_tensor(buf, np.zeros(1, dtype=np.float32))
        raw = bytearray(buf.getvalue())
        raw[4] = 99
        with pytest.raises(ftns.FtnsError, match="version"):
            ftns.read_tensor(io.BytesIO(bytes(raw)))

    def test_unknown_dtype_code(self):
        buf = io.BytesIO()
        ftns.write_tensor(buf, np.zeros(1, dtype=np.float32))
        raw = bytearray(buf.getvalue())
        raw[8] = 7
        with pytest.raises(ftns.FtnsError, match="dtype"):
            ftns.read_tensor(io.BytesIO(bytes(raw)))

    def test_truncated_payload(self):
        buf = io.BytesIO()
        ftns.write_tensor(buf, np.zeros(10, dtype=np.float64))
        raw = buf.getvalue()[:-4]
        with pytest.raises(ftns.FtnsError, match="truncated"):
            ftns.read_tensor(io.BytesIO(raw))

    def test_truncated_header(self):
        with pytest.raises(ftns.FtnsError):
            ftns.read_tensor(io.BytesIO(b"FTNS\x01"))

    def test_integer_array_rejected_on_write(self):
        with pytest.raises(ftns.FtnsError, match="dtype"):
            ftns.write_tensor(io.BytesIO(), np.zeros(3, dtype=np.int64))
