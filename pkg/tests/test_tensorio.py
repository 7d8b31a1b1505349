import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sliderkit.errors import ParseError
from sliderkit.tensorio import (
    dump_tensors,
    load_tensors,
    read_tensor_file,
    sha256_file,
    write_tensor_file,
)


def test_round_trip_multiple_dtypes(tmp_path):
    tensors = {
        "f32": np.arange(12, dtype=np.float32).reshape(3, 4),
        "f64": np.linspace(0, 1, 5),
        "i64": np.array([[1, -2], [3, 4]], dtype=np.int64),
        "i32": np.array([7], dtype=np.int32),
        "scalarish": np.zeros((), dtype=np.float64),
    }
    meta = {"plan": "x", "nested": {"k": [1, 2]}}
    path = tmp_path / "t.trec"
    digest = write_tensor_file(path, tensors, meta)
    assert digest == sha256_file(path)
    got, got_meta = read_tensor_file(path)
    assert got_meta == meta
    for name, arr in tensors.items():
        np.testing.assert_array_equal(got[name], arr)
        assert got[name].dtype == arr.dtype


def test_deterministic_bytes():
    tensors = {"a": np.ones((2, 2), dtype=np.float32)}
    assert dump_tensors(tensors, {"m": 1}) == dump_tensors(tensors, {"m": 1})


def test_unsupported_dtype():
    with pytest.raises(ValueError):
        dump_tensors({"bad": np.array(["x"])})


def test_truncation_detected():
    data = dump_tensors({"a": np.zeros(8, dtype=np.float64)})
    with pytest.raises(ParseError):
        load_tensors(data[:-3])


def test_bad_magic_and_trailing_bytes():
    data = dump_tensors({"a": np.zeros(2, dtype=np.float32)})
    with pytest.raises(ParseError):
        load_tensors(b"NOPE" + data[4:])
    with pytest.raises(ParseError):
        load_tensors(data + b"\x00")


def test_corrupt_metadata_block():
    data = bytearray(dump_tensors({}, {"key": "value"}))
    data[9] = 0xFF  # stomp inside the JSON blob
    with pytest.raises(ParseError):
        load_tensors(bytes(data))


@settings(max_examples=25, deadline=None)
@given(
    arr=arrays(
        dtype=st.sampled_from([np.float32, np.float64, np.int64]),
        shape=st.lists(st.integers(0, 5), min_size=0, max_size=3).map(tuple),
        elements=st.integers(-100, 100),
    )
)
def test_round_trip_property(arr):
    got, _ = load_tensors(dump_tensors({"x": arr}))
    np.testing.assert_array_equal(got["x"], arr)
    assert got["x"].dtype == arr.dtype
