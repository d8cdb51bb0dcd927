import numpy as np
import pytest

from mcmt.checkpoint import Checkpoint, config_fingerprint, load_checkpoint, save_checkpoint


class TestContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "w.f64": rng.standard_normal((3, 5)),
            "b.f32": rng.standard_normal(7).astype(np.float32),
            "ids": rng.integers(0, 100, size=(2, 2, 2)),
            "scalarish": rng.standard_normal((1,)),
        }
        path = tmp_path / "ck.mckp"
        save_checkpoint(path, {"alpha": 5.0, "k": 3}, arrays, extra={"epoch": 4})
        loaded = load_checkpoint(path)
        assert loaded.config == {"alpha": 5.0, "k": 3}
        assert loaded.extra == {"epoch": 4}
        assert set(loaded.arrays) == set(arrays)
        for name, original in arrays.items():
            assert loaded.arrays[name].dtype == original.dtype
            np.testing.assert_array_equal(loaded.arrays[name], original)

    def test_fingerprint_matches_config(self, tmp_path):
        path = tmp_path / "ck.mckp"
        save_checkpoint(path, {"a": 1}, {"x": np.zeros(2)})
        loaded = load_checkpoint(path)
        assert loaded.fingerprint == config_fingerprint({"a": 1})

    def test_fingerprint_is_order_insensitive(self):
        assert config_fingerprint({"a": 1, "b": 2}) == config_fingerprint({"b": 2, "a": 1})
        assert config_fingerprint({"a": 1}) != config_fingerprint({"a": 2})

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.mckp"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_rejects_trailing_bytes(self, tmp_path):
        path = tmp_path / "ck.mckp"
        save_checkpoint(path, {}, {"x": np.zeros(2)})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)

    def test_detects_tampered_config(self, tmp_path):
        path = tmp_path / "ck.mckp"
        save_checkpoint(path, {"a": 1}, {"x": np.zeros(2)})
        blob = path.read_bytes()
        tampered = blob.replace(b'"a": 1', b'"a": 2')
        assert tampered != blob
        path.write_bytes(tampered)
        with pytest.raises(ValueError, match="fingerprint"):
            load_checkpoint(path)
