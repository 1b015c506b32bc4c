import hashlib
import json
import struct
from fractions import Fraction

import numpy as np
from mergelab.tensor_store import Checkpoint

NP_DTYPES = {"F32": "<f4", "F64": "<f8", "I64": "<i8"}
TAGS = {v: k for k, v in NP_DTYPES.items()}


def random_arrays(rng, n_tensors, max_dim=4, dtypes=("F32", "F64", "I64"), scale_exp=(-3, 4)):
    """Dict of randomly shaped arrays; floats span several orders of magnitude."""
    arrays = {}
    for i in range(n_tensors):
        dtype = dtypes[rng.integers(len(dtypes))]
        shape = tuple(int(d) for d in rng.integers(0, max_dim + 1, size=rng.integers(0, 3)))
        if dtype == "I64":
            arr = rng.integers(-(2**40), 2**40, size=shape)
        else:
            arr = rng.standard_normal(shape) * 10.0 ** rng.integers(*scale_exp, size=shape)
        arrays[f"t{i:03d}.{rng.integers(1000)}"] = np.asarray(arr).astype(NP_DTYPES[dtype])
    return arrays


def fingerprint_of(arrays) -> str:
    items = sorted((name, TAGS[np.asarray(a).dtype.str], list(np.asarray(a).shape)) for name, a in arrays.items())
    return hashlib.sha256(json.dumps(items, separators=(",", ":")).encode()).hexdigest()


def canonical_file(arrays, metadata=None):
    """Independent writer for the container layout (does not use mergelab).

    Adds the arch_fingerprint entry the way a canonical file carries it.
    """
    header, blobs, offset = {}, [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        tag = TAGS[arr.dtype.str]
        blob = arr.tobytes()
        header[name] = {"dtype": tag, "shape": list(arr.shape), "data_offsets": [offset, offset + len(blob)]}
        blobs.append(blob)
        offset += len(blob)
    header["__metadata__"] = {**(metadata or {}), "arch_fingerprint": fingerprint_of(arrays)}
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    text += b" " * (-len(text) % 8)
    return struct.pack("<Q", len(text)) + text + b"".join(blobs)


def raw_file(header: dict, data: bytes) -> bytes:
    text = json.dumps(header).encode()
    return struct.pack("<Q", len(text)) + text + data


def exact_lerp(a: float, b: float, alpha: float) -> float:
    """(1 - alpha) * a + alpha * b in exact rational arithmetic, rounded once to float64."""
    fa, fb, t = Fraction(a), Fraction(b), Fraction(alpha)
    return float((1 - t) * fa + t * fb)


def ulps(x, y, dtype) -> np.ndarray:
    """Distance between x and y in units of the larger magnitude's ulp in ``dtype``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mag = np.maximum(np.abs(x), np.abs(y)).astype(dtype)
    spacing = np.spacing(mag).astype(np.float64)
    diff = np.abs(x - y)
    return np.where(diff == 0, 0.0, diff / np.where(spacing == 0, np.inf, spacing))


def float_payload(cp: Checkpoint) -> dict:
    return {n: cp.buffer(n) for n in cp if cp.meta(n).dtype.is_float}




def _entry(dtype, shape, begin, end):
    return {"dtype": dtype, "shape": shape, "data_offsets": [begin, end]}


def malformed_corpus():
    """(label, bytes, expected error name) triples of invalid files."""
    from mergelab import exceptions as E

    eight = bytes(8)
    good = {"w": _entry("F32", [2], 0, 8)}
    dup_text = b'{"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}}'
    wrong_fp = canonical_file({"w": np.zeros(2, "<f4")}).replace(b'"arch_fingerprint":"', b'"arch_fingerprint":"0', 1)
    # keep header length consistent after the 1-byte insertion
    n = struct.unpack("<Q", wrong_fp[:8])[0] + 1
    wrong_fp = struct.pack("<Q", n) + wrong_fp[8:]
    return [
        ("shorter than length prefix", b"\x01\x02", E.MalformedHeader),
        ("header length past end", struct.pack("<Q", 1000) + b"{}", E.MalformedHeader),
        ("header not json", struct.pack("<Q", 5) + b"{nope" + eight, E.MalformedHeader),
        ("header not utf-8", struct.pack("<Q", 2) + b"\xff\xfe", E.MalformedHeader),
        ("header is a list", raw_file([], b""), E.MalformedHeader),
        ("unknown dtype F16", raw_file({"w": _entry("F16", [2], 0, 4)}, bytes(4)), E.MalformedHeader),
        ("unknown dtype BF16", raw_file({"w": _entry("BF16", [2], 0, 4)}, bytes(4)), E.MalformedHeader),
        ("lowercase dtype", raw_file({"w": _entry("f32", [2], 0, 8)}, eight), E.MalformedHeader),
        ("negative dim", raw_file({"w": _entry("F32", [-2], 0, 8)}, eight), E.MalformedHeader),
        ("float dim", raw_file({"w": _entry("F32", [2.0], 0, 8)}, eight), E.MalformedHeader),
        ("bool dim", raw_file({"w": _entry("F32", [True], 0, 4)}, bytes(4)), E.MalformedHeader),
        ("offsets wrong arity", raw_file({"w": {"dtype": "F32", "shape": [2], "data_offsets": [0]}}, eight), E.MalformedHeader),
        ("missing shape key", raw_file({"w": {"dtype": "F32", "data_offsets": [0, 8]}}, eight), E.MalformedHeader),
        ("extra entry key", raw_file({"w": {**_entry("F32", [2], 0, 8), "extra": 1}}, eight), E.MalformedHeader),
        ("empty name", raw_file({"": _entry("F32", [2], 0, 8)}, eight), E.MalformedHeader),
        ("metadata not strings", raw_file({**good, "__metadata__": {"k": 1}}, eight), E.MalformedHeader),
        ("fingerprint mismatch", wrong_fp, E.MalformedHeader),
        ("duplicate tensor name", struct.pack("<Q", len(dup_text)) + dup_text + eight, E.DuplicateName),
        ("overlapping ranges", raw_file({"a": _entry("F32", [2], 0, 8), "b": _entry("F32", [2], 4, 12)}, bytes(12)), E.OffsetError),
        ("gap between tensors", raw_file({"a": _entry("F32", [1], 0, 4), "b": _entry("F32", [1], 8, 12)}, bytes(12)), E.OffsetError),
        ("gap at start", raw_file({"a": _entry("F32", [1], 4, 8)}, eight), E.OffsetError),
        ("trailing bytes", raw_file(good, bytes(12)), E.OffsetError),
        ("range past data end", raw_file(good, bytes(4)), E.OffsetError),
        ("range size mismatch", raw_file({"w": _entry("F32", [3], 0, 8)}, eight), E.OffsetError),
        ("reversed range", raw_file({"w": _entry("F32", [0], 8, 0)}, eight), E.OffsetError),
    ]
