import io

import numpy as np
import pytest

from tmcvae.errors import ContractError
from tmcvae.mvt import (
    load_container,
    load_tensor,
    read_tensor,
    save_container,
    save_tensor,
    sha256_file,
    tensor_bytes,
    write_tensor,
)


def round_trip(arr):
    buf = io.BytesIO()
    write_tensor(buf, arr)
    buf.seek(0)
    return read_tensor(buf)


class TestRecordFormat:
    def test_f64_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((3, 4, 5))
        back = round_trip(arr)
        assert back.dtype == np.float64
        assert back.tobytes() == arr.tobytes()

    def test_f32_round_trip_bit_exact(self):
        rng = np.random.default_rng(1)
        arr = rng.standard_normal((7, 2)).astype(np.float32)
        back = round_trip(arr)
        assert back.dtype == np.float32
        assert back.tobytes() == arr.tobytes()

    def test_rank_zero(self):
        back = round_trip(np.array(3.75))
        assert back.shape == ()
        assert float(back) == 3.75

    def test_empty_tensor(self):
        back = round_trip(np.zeros((0, 4)))
        assert back.shape == (0, 4)

    def test_header_layout(self):
        data = tensor_bytes(np.zeros((2, 3)))
        assert data[:4] == b"MVT1"
        assert data[4] == 2          # f64 code
        assert data[5] == 2          # rank
        assert int.from_bytes(data[6:14], "little") == 2
        assert int.from_bytes(data[14:22], "little") == 3
        assert len(data) == 22 + 8 * 6

    def test_int_input_promoted(self):
        back = round_trip(np.array([1, 2, 3]))
        assert back.dtype == np.float64
        assert np.array_equal(back, [1.0, 2.0, 3.0])

    def test_bad_magic(self):
        with pytest.raises(ContractError):
            read_tensor(io.BytesIO(b"NOPE" + b"\x00" * 16))

    def test_truncated_payload(self):
        data = tensor_bytes(np.ones(8))[:-4]
        with pytest.raises(ContractError):
            read_tensor(io.BytesIO(data))

    def test_file_round_trip(self, tmp_path):
        arr = np.linspace(0, 1, 11)
        save_tensor(tmp_path / "t.mvt", arr)
        assert np.array_equal(load_tensor(tmp_path / "t.mvt"), arr)


class TestContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        arrays = {
            "weights.0": rng.standard_normal((4, 3)),
            "bias": rng.standard_normal(3),
            "scalar": np.array(2.5),
            "empty": np.zeros((0,)),
        }
        path = tmp_path / "params.mvt"
        save_container(path, arrays)
        back = load_container(path)
        assert set(back) == set(arrays)
        for k in arrays:
            assert back[k].tobytes() == np.asarray(arrays[k], dtype=float).tobytes()

    def test_manifest_records_hash(self, tmp_path):
        path = tmp_path / "data.mvt"
        digest = save_container(path, {"x": np.arange(5.0)})
        assert digest == sha256_file(path)
        manifest = (tmp_path / "data.mvt.manifest").read_text()
        assert digest in manifest
        assert "x = 0 5" in manifest

    def test_deterministic_bytes(self, tmp_path):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2)}
        p1, p2 = tmp_path / "one.mvt", tmp_path / "two.mvt"
        save_container(p1, arrays)
        save_container(p2, arrays)
        assert p1.read_bytes() == p2.read_bytes()
