import numpy as np
import pytest

from ptscnn.checkpoint import MAGIC, load_checkpoint, save_checkpoint


class TestCheckpointFormat:
    def test_round_trip_preserves_order_names_and_bits(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = [
            ("alpha.weight", rng.standard_normal((3, 4))),
            ("alpha.bias", rng.standard_normal(3)),
            ("beta", rng.standard_normal((2, 2, 5))),
            ("scalarish", np.array(3.25)),
        ]
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, arrays)
        back = load_checkpoint(path)
        assert [n for n, _ in back] == [n for n, _ in arrays]
        for (_, a), (_, b) in zip(arrays, back):
            assert b.dtype == np.float64
            np.testing.assert_array_equal(a, b)

    def test_layout_starts_with_magic_and_version(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, [("a", np.zeros(2))])
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert int.from_bytes(raw[8:12], "little") == 1   # version
        assert int.from_bytes(raw[12:16], "little") == 1  # count

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError, match="bad magic"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, [("a", np.zeros(2))])
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)

    def test_float32_arrays_stored_as_float64(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, [("a", np.array([0.5, 1.5], dtype=np.float32))])
        (_, back), = load_checkpoint(path)
        assert back.dtype == np.float64
        np.testing.assert_array_equal(back, [0.5, 1.5])
