"""Readers and writers for the on-disk artifacts.

Text formats
------------
* corpus manifest: JSON-lines ``{"id", "path", "category"}``
* feature matrix: header ``sonolab-feat v1 <dim>`` then ``id,v0,v1,...`` rows
* embedding file: header ``sonolab-emb v1 <dim>`` then ``v0,v1,...`` rows

Binary containers
-----------------
Codec, codebook and model checkpoints share one little-endian layout::

    magic (4 bytes) | version u32 | meta_len u32 | meta (utf-8 JSON)
    | n_arrays u32 | per array: name_len u32, name, ndim u32, dims u32*ndim
    | float64 payloads in array order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FEATURE_MAGIC = "sonolab-feat"
EMBEDDING_MAGIC = "sonolab-emb"
BINARY_VERSION = 1


class FormatError(ValueError):
    """Raised when an artifact file is malformed or has the wrong version."""


def read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path):
    """Corpus manifest rows, validated for the required keys."""
    rows = read_jsonl(path)
    base = Path(path).parent
    out = []
    for row in rows:
        missing = {"id", "path", "category"} - row.keys()
        if missing:
            raise FormatError(f"manifest row {row!r} missing {sorted(missing)}")
        p = Path(row["path"])
        if not p.is_absolute():
            p = base / p
        out.append({"id": str(row["id"]), "path": str(p), "category": str(row["category"])})
    ids = [r["id"] for r in out]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate clip ids in manifest")
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_feature_matrix(path, ids, features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != len(ids):
        raise ValueError("features must be (n_clips, dim) aligned with ids")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{FEATURE_MAGIC} v1 {features.shape[1]}\n")
        for clip_id, row in zip(ids, features):
            if "," in clip_id:
                raise ValueError(f"clip id {clip_id!r} contains a comma")
            fh.write(clip_id + "," + ",".join(_fmt(v) for v in row) + "\n")


def _read_header(fh, magic):
    header = fh.readline().split()
    if len(header) != 3 or header[0] != magic:
        raise FormatError(f"expected '{magic} v1 <dim>' header")
    if header[1] != "v1":
        raise FormatError(f"unsupported {magic} version {header[1]}")
    try:
        dim = int(header[2])
    except ValueError:
        raise FormatError("non-integer dimension in header") from None
    if dim < 1:
        raise FormatError("dimension must be positive")
    return dim


def read_feature_matrix(path):
    """Return ``(ids, features)``."""
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        dim = _read_header(fh, FEATURE_MAGIC)
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 1:
                raise FormatError(f"row for {parts[0]!r} has {len(parts) - 1} values, expected {dim}")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def write_embeddings(path, vectors):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{EMBEDDING_MAGIC} v1 {vectors.shape[1]}\n")
        for row in vectors:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_embeddings(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        dim = _read_header(fh, EMBEDDING_MAGIC)
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            if len(vals) != dim:
                raise FormatError(f"{path}:{lineno}: {len(vals)} values, expected {dim}")
            rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return arr


def write_binary(path, magic, arrays, meta=None):
    """Write named float64 arrays plus a JSON metadata blob."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 characters")
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic.encode("ascii"))
        fh.write(struct.pack("<II", BINARY_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        names = list(arrays)
        for name in names:
            arr = np.asarray(arrays[name], dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            fh.write(arr.tobytes())


def read_binary(path, magic):
    """Return ``(arrays, meta)`` from a file written by :func:`write_binary`."""
    data = Path(path).read_bytes()
    if data[:4] != magic.encode("ascii"):
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    try:
        version, meta_len = struct.unpack_from("<II", data, 4)
        if version != BINARY_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        off = 12
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
        off += meta_len
        (n_arrays,) = struct.unpack_from("<I", data, off)
        off += 4
        specs = []
        for _ in range(n_arrays):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            specs.append((name, shape))
        arrays = {}
        for name, shape in specs:
            count = int(np.prod(shape, dtype=np.int64))
            if off + 8 * count > len(data):
                raise FormatError(f"{path}: truncated payload for {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return arrays, meta
