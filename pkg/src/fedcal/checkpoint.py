"""Self-describing binary container for arrays plus metadata.

Layout: a magic line, one compact JSON header line (kind, metadata,
array directory), then each array's raw bytes in directory order.
Floats are little-endian float64 and integers little-endian int64, so
a parse/serialize round trip is byte-identical and equality of files
is equality of contents. Writes go through a temp file and rename, so
an interrupted save never leaves a half-written container behind.
"""

import json
import os

import numpy as np

MAGIC = b"FEDCKPT 1\n"

_DTYPES = {"f8": "<f8", "i8": "<i8"}


class ContainerError(ValueError):
    """Malformed container file."""


def _dtype_tag(arr):
    if arr.dtype.kind == "f":
        return "f8"
    if arr.dtype.kind in ("i", "u"):
        return "i8"
    raise ValueError(f"unsupported array dtype {arr.dtype} (float and integer only)")


def save_container(path, kind, meta, arrays):
    """Write named arrays with metadata; deterministic bytes for equal inputs.

    ``arrays`` maps name -> ndarray; insertion order is preserved and
    becomes the payload order.
    """
    directory = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _dtype_tag(arr)
        cast = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
        directory.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        blobs.append(cast.tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": directory},
                        sort_keys=True, separators=(",", ":"))
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(header.encode("utf8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_container(path, expect_kind=None):
    """Read a container back: (kind, meta, {name: array})."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise ContainerError(f"{path}: bad magic, not a container file")
    nl = data.find(b"\n", len(MAGIC))
    if nl < 0:
        raise ContainerError(f"{path}: missing header line")
    try:
        header = json.loads(data[len(MAGIC):nl].decode("utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: unreadable header: {e}") from None
    for key in ("kind", "meta", "arrays"):
        if key not in header:
            raise ContainerError(f"{path}: header missing {key!r}")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise ContainerError(
            f"{path}: container kind {header['kind']!r}, expected {expect_kind!r}")

    arrays = {}
    off = nl + 1
    for entry in header["arrays"]:
        tag = entry["dtype"]
        if tag not in _DTYPES:
            raise ContainerError(f"{path}: unknown dtype tag {tag!r}")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(data):
            raise ContainerError(
                f"{path}: truncated payload for array {entry['name']!r} "
                f"(need {nbytes} bytes at offset {off}, file has {len(data)})")
        arr = np.frombuffer(data[off : off + nbytes], dtype=_DTYPES[tag]).reshape(shape)
        arrays[entry["name"]] = arr.copy()
        off += nbytes
    if off != len(data):
        raise ContainerError(f"{path}: {len(data) - off} trailing bytes after payload")
    return header["kind"], header["meta"], arrays
