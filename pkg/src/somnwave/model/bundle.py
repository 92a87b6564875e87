"""Self-describing model bundle without pickle.

Layout (little-endian)::

    offset  size  field
    0       8     magic b"SOMNMDL1"
    8       4     u32 format version
    12      4     u32 header length H
    16      H     UTF-8 JSON object graph
    16+H    8     u64 array blob length B
    24+H    B     concatenated raw array buffers

Arrays in the JSON graph are ``{"__array__": i}`` references into an
``arrays`` table of ``{dtype, shape, offset, nbytes}`` entries. Objects are
restricted to a registry of known classes; anything else is rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from somnwave.exceptions import BundleVersionMismatch, CacheFormatError
from somnwave.model.boosting import GradientBoosting
from somnwave.model.ensemble import SoftVotingEnsemble
from somnwave.model.forest import RandomForest
from somnwave.model.svm import BinarySvm, RbfSvm
from somnwave.model.tree import Tree

MAGIC = b"SOMNMDL1"
FORMAT_VERSION = 1

_REGISTRY = {}


def register(cls):
    _REGISTRY[cls.__name__] = cls
    return cls


for _cls in (RandomForest, GradientBoosting, RbfSvm, BinarySvm, Tree, SoftVotingEnsemble):
    register(_cls)


class _Encoder:
    def __init__(self):
        self.arrays = []
        self.table = []
        self.offset = 0

    def array(self, a):
        a = np.ascontiguousarray(a)
        if a.dtype == object:
            return {"__objarray__": [self.encode(v) for v in a.tolist()],
                    "shape": list(a.shape)}
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        self.table.append({"dtype": le.dtype.str, "shape": list(a.shape),
                           "offset": self.offset, "nbytes": len(raw)})
        self.arrays.append(raw)
        self.offset += len(raw)
        return {"__array__": len(self.table) - 1}

    def encode(self, v):
        if v is None or isinstance(v, (bool, str)):
            return v
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
            return int(v)
        if isinstance(v, (float, np.floating)):
            return float(v)
        if isinstance(v, np.bool_):
            return bool(v)
        if isinstance(v, np.ndarray):
            return self.array(v)
        if isinstance(v, tuple):
            return {"__tuple__": [self.encode(x) for x in v]}
        if isinstance(v, list):
            return [self.encode(x) for x in v]
        if isinstance(v, dict):
            if all(isinstance(k, str) for k in v):
                if any(k.startswith("__") for k in v):
                    raise TypeError("dict keys may not start with '__'")
                return {k: self.encode(x) for k, x in v.items()}
            return {"__items__": [[self.encode(k), self.encode(x)] for k, x in v.items()]}
        name = type(v).__name__
        if _REGISTRY.get(name) is not type(v):
            raise TypeError(f"cannot serialize objects of type {name}")
        if dataclasses.is_dataclass(v):
            state = {f.name: getattr(v, f.name) for f in dataclasses.fields(v)}
        else:
            state = dict(vars(v))
        return {"__object__": name, "state": {k: self.encode(x) for k, x in state.items()}}


def _decode(v, table, blob):
    if isinstance(v, list):
        return [_decode(x, table, blob) for x in v]
    if not isinstance(v, dict):
        return v
    if "__array__" in v:
        spec = table[v["__array__"]]
        raw = blob[spec["offset"]:spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])
        return arr.astype(arr.dtype.newbyteorder("="))
    if "__objarray__" in v:
        items = [_decode(x, table, blob) for x in v["__objarray__"]]
        out = np.empty(len(items), dtype=object)
        out[:] = items
        return out.reshape(v["shape"])
    if "__tuple__" in v:
        return tuple(_decode(x, table, blob) for x in v["__tuple__"])
    if "__items__" in v:
        return {_decode(k, table, blob): _decode(x, table, blob) for k, x in v["__items__"]}
    if "__object__" in v:
        cls = _REGISTRY.get(v["__object__"])
        if cls is None:
            raise CacheFormatError(f"bundle references unknown class {v['__object__']!r}")
        state = {k: _decode(x, table, blob) for k, x in v["state"].items()}
        if dataclasses.is_dataclass(cls):
            return cls(**state)
        obj = cls.__new__(cls)
        obj.__dict__.update(state)
        return obj
    return {k: _decode(x, table, blob) for k, x in v.items()}


def dumps(payload):
    """Serialize a payload (dict of registered objects, arrays and plain values)."""
    enc = _Encoder()
    graph = enc.encode(payload)
    blob = b"".join(enc.arrays)
    header = json.dumps(
        {"graph": graph, "arrays": enc.table, "blob_sha256": hashlib.sha256(blob).hexdigest()},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return (MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header
            + struct.pack("<Q", len(blob)) + blob)


def loads(data):
    if data[:8] != MAGIC:
        raise CacheFormatError("not a model bundle (bad magic)")
    if len(data) < 16:
        raise CacheFormatError("truncated bundle header")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise BundleVersionMismatch(
            f"bundle format version {version}, this build reads {FORMAT_VERSION}")
    start = 16 + hlen
    if len(data) < start + 8:
        raise CacheFormatError("truncated bundle")
    header = json.loads(data[16:start].decode("utf-8"))
    (blen,) = struct.unpack_from("<Q", data, start)
    blob = data[start + 8:start + 8 + blen]
    if len(blob) != blen or hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise CacheFormatError("bundle array section is truncated or corrupt")
    return _decode(header["graph"], header["arrays"], blob)


def save_bundle(path, payload):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(payload))
    tmp.replace(path)
    return path


def load_bundle(path):
    return loads(Path(path).read_bytes())
