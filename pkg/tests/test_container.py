import numpy as np
import pytest

from ecgi_vae.container import decode_container, encode_container, load_container, save_container
from ecgi_vae.errors import FormatError


def test_round_trip_bit_exact(tmp_path, rng):
    tensors = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5).astype(np.float32),
               "idx": np.arange(7, dtype=np.int64), "empty": np.zeros((0, 3))}
    path = save_container(tmp_path / "x.ntc", tensors, {"note": "hi", "vals": [1, 2.5]})
    back, meta = load_container(path)
    assert list(back) == list(tensors)
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype
        assert back[k].tobytes() == v.tobytes()
    assert meta == {"note": "hi", "vals": [1, 2.5]}


def test_wrong_magic():
    buf = bytearray(encode_container({"a": np.ones(2)}))
    buf[:4] = b"XXXX"
    with pytest.raises(FormatError, match="magic"):
        decode_container(bytes(buf))


def test_empty_file(tmp_path):
    p = tmp_path / "zero.ntc"
    p.write_bytes(b"")
    with pytest.raises(FormatError):
        load_container(p)


def test_truncated_payload():
    buf = encode_container({"a": np.ones(10)})
    with pytest.raises(FormatError, match="truncated"):
        decode_container(buf[:-8])


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode_container(encode_container({"a": np.ones(2)}) + b"\0")


def test_duplicate_names_rejected():
    with pytest.raises(FormatError, match="duplicate"):
        encode_container([("a", np.ones(1)), ("a", np.ones(1))])


def test_version_checked():
    buf = encode_container({"a": np.ones(1)})
    bad = buf.replace(b'"version": 1', b'"version": 9')
    with pytest.raises(FormatError, match="version"):
        decode_container(bad)


def test_payload_is_little_endian():
    buf = encode_container({"a": np.array([1.0])})
    assert buf[-8:] == np.array([1.0], dtype="<f8").tobytes()
