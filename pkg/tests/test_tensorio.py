import numpy as np
import pytest

from videomotion.tensorio import FormatError, load_tensors, save_tensors


def test_round_trip(tmp_path, rng):
    path = tmp_path / "t.vmtf"
    tensors = {
        "a": rng.normal(size=(3, 4)).astype(np.float32),
        "b": np.arange(10, dtype=np.int64),
        "c": rng.normal(size=(2, 2, 2)),
    }
    save_tensors(path, tensors, meta={"kind": "test", "n": 3})
    back, meta = load_tensors(path)
    assert meta == {"kind": "test", "n": 3}
    for name, arr in tensors.items():
        np.testing.assert_array_equal(back[name], arr)
        assert back[name].dtype == arr.dtype


def test_empty_file_ok(tmp_path):
    path = tmp_path / "e.vmtf"
    save_tensors(path, {}, meta={})
    back, meta = load_tensors(path)
    assert back == {} and meta == {}


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.vmtf"
    path.write_bytes(b"garbage bytes here")
    with pytest.raises(FormatError):
        load_tensors(path)


def test_truncated_data(tmp_path, rng):
    path = tmp_path / "t.vmtf"
    save_tensors(path, {"x": rng.normal(size=(100,)).astype(np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="truncated"):
        load_tensors(path)
