"""Named-tensor container ("NTC1") used for weights, lead fields and sequences.

Layout::

    b"NTC1" | uint32 LE header length | UTF-8 JSON header | payloads

The header lists every tensor (name, shape, dtype, byte order, byte count) in
payload order plus a free-form ``metadata`` map. Payloads are packed
little-endian, C order, with no padding.
"""
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"NTC1"
VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "int32": "<i4",
           "uint8": "|u1", "bool": "|b1"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def encode_container(tensors, metadata=None):
    """Serialize a mapping ``name -> array`` to container bytes."""
    entries = []
    payloads = []
    seen = set()
    items = tensors.items() if isinstance(tensors, dict) else tensors
    for name, arr in items:
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        key = arr.dtype.name
        if key not in _DTYPES:
            raise FormatError(f"unsupported dtype {key} for tensor {name!r}")
        data = np.ascontiguousarray(arr, dtype=np.dtype(_DTYPES[key])).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": key,
                        "byteorder": "little", "nbytes": len(data)})
        payloads.append(data)
    header = {"version": VERSION, "tensors": entries,
              "metadata": _jsonable(metadata or {})}
    hbytes = json.dumps(header, sort_keys=True, allow_nan=True).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<I", len(hbytes)), hbytes] + payloads)


def decode_container(buf):
    """Parse container bytes into ``(OrderedDict of arrays, metadata)``."""
    if len(buf) < 8:
        raise FormatError("container truncated: missing preamble")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}")
    (hlen,) = struct.unpack("<I", buf[4:8])
    if 8 + hlen > len(buf):
        raise FormatError("container truncated inside header")
    try:
        header = json.loads(buf[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from None
    if header.get("version") != VERSION:
        raise FormatError(f"unsupported container version {header.get('version')!r}")
    out = OrderedDict()
    pos = 8 + hlen
    for entry in header.get("tensors", []):
        name = entry["name"]
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        if entry["dtype"] not in _DTYPES:
            raise FormatError(f"unsupported dtype {entry['dtype']!r}")
        dt = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(entry["nbytes"])
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise FormatError(f"byte count of {name!r} disagrees with its shape")
        if pos + nbytes > len(buf):
            raise FormatError(f"container truncated in tensor {name!r}")
        arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos)
        out[name] = arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out, header.get("metadata", {})


def save_container(path, tensors, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(tensors, metadata))
    return path


def load_container(path):
    """Read a container file; returns ``(tensors, metadata)``."""
    return decode_container(Path(path).read_bytes())
