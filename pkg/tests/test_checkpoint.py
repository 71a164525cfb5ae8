"""Container format tests: round trips, determinism, corruption handling."""

import numpy as np
import pytest

from fedcal.checkpoint import MAGIC, ContainerError, load_container, save_container


class TestRoundTrip:
    def test_arrays_and_meta_survive_exactly(self, tmp_path):
        path = tmp_path / "box.fck"
        rng = np.random.default_rng(42)
        arrays = {
            "theta": rng.normal(size=257),
            "matrix": rng.normal(size=(13, 7)),
            "labels": rng.integers(0, 10, 31),
        }
        meta = {"seed": 42, "nested": {"alpha": 0.1, "name": "run-a"}}
        save_container(path, "demo", meta, arrays)
        kind, got_meta, got = load_container(path)
        assert kind == "demo"
        assert got_meta == meta
        assert list(got) == list(arrays)
        np.testing.assert_array_equal(got["theta"], arrays["theta"])
        np.testing.assert_array_equal(got["matrix"], arrays["matrix"])
        np.testing.assert_array_equal(got["labels"], arrays["labels"])
        assert got["labels"].dtype == np.int64
        assert got["theta"].dtype == np.float64

    def test_float_bits_preserved(self, tmp_path):
        path = tmp_path / "bits.fck"
        vals = np.array([0.1, -0.0, np.pi, 1e-300, 1.7e308])
        save_container(path, "demo", {}, {"v": vals})
        _, _, got = load_container(path)
        assert got["v"].tobytes() == vals.tobytes()

    def test_save_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.fck", tmp_path / "b.fck"
        arrays = {"x": np.arange(5.0), "y": np.arange(3)}
        meta = {"b": 2, "a": 1}
        save_container(a, "demo", meta, arrays)
        save_container(b, "demo", meta, arrays)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_arrays_allowed(self, tmp_path):
        path = tmp_path / "empty.fck"
        save_container(path, "demo", {}, {"base": np.zeros(0)})
        _, _, got = load_container(path)
        assert got["base"].shape == (0,)


class TestCorruption:
    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.fck"
        path.write_bytes(b"NOTAFILE\n{}")
        with pytest.raises(ContainerError, match="magic"):
            load_container(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.fck"
        save_container(path, "demo", {}, {"x": np.arange(10.0)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ContainerError, match="truncated"):
            load_container(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "trail.fck"
        save_container(path, "demo", {}, {"x": np.arange(4.0)})
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(ContainerError, match="trailing"):
            load_container(path)

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "kind.fck"
        save_container(path, "dataset", {}, {"x": np.arange(4.0)})
        with pytest.raises(ContainerError, match="kind"):
            load_container(path, expect_kind="model")

    def test_unreadable_header_rejected(self, tmp_path):
        path = tmp_path / "hdr.fck"
        path.write_bytes(MAGIC + b"not json\n")
        with pytest.raises(ContainerError, match="header"):
            load_container(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="dtype"):
            save_container(tmp_path / "c.fck", "demo", {},
                           {"x": np.array(["a", "b"])})
