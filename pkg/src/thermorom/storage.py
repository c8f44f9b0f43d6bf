"""Shared binary container and CSV plumbing for on-disk artifacts.

Every binary artifact (grid series, PCA basis, model file) uses the same
layout: an 8-byte magic, a little-endian uint32 format version, a JSON
header that carries metadata plus an array manifest, and the raw C-order
little-endian array payloads in manifest order.  Raw float64/int64 bytes
round-trip bit-exactly.

CSV artifacts are plain comma-separated text with a single header row.
Leading ``#`` lines carry key=value annotations (notably the producing
config hash).  Floats are written with ``repr`` so the shortest exact
representation is stored and reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from datetime import datetime, timezone

import numpy as np

_PREAMBLE = struct.Struct("<8sII")

# dtypes permitted in blob payloads, normalized to little-endian
_BLOB_DTYPES = {"<f8", "<i8", "<f4", "<i4"}


class StorageError(Exception):
    """File does not match the expected container layout."""


def write_blob(path, magic: bytes, version: int, meta: dict, arrays: dict) -> None:
    """Write a versioned binary container.

    ``arrays`` maps name -> ndarray; insertion order fixes the payload order.
    """
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    manifest = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<").str
        if dt not in _BLOB_DTYPES:
            raise StorageError(f"unsupported dtype {arr.dtype} for array {name!r}")
        arr = arr.astype(dt, copy=False)
        manifest.append([name, dt, list(arr.shape)])
        payloads.append(arr.tobytes(order="C"))
    header = json.dumps({"meta": meta, "arrays": manifest}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(magic, version, len(header)))
        fh.write(header)
        for payload in payloads:
            fh.write(payload)


def read_blob(path, magic: bytes):
    """Read a container written by :func:`write_blob`.

    Returns ``(version, meta, arrays)`` where arrays is a name -> ndarray
    dict (writable copies).
    """
    with open(path, "rb") as fh:
        preamble = fh.read(_PREAMBLE.size)
        if len(preamble) != _PREAMBLE.size:
            raise StorageError(f"{path}: truncated preamble")
        got_magic, version, header_len = _PREAMBLE.unpack(preamble)
        if got_magic != magic:
            raise StorageError(
                f"{path}: magic {got_magic!r} does not match expected {magic!r}"
            )
        try:
            header = json.loads(fh.read(header_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise StorageError(f"{path}: corrupt header ({exc})") from exc
        arrays = {}
        for name, dt, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * np.dtype(dt).itemsize)
            if len(raw) != count * np.dtype(dt).itemsize:
                raise StorageError(f"{path}: truncated payload for array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return version, header["meta"], arrays


def blob_content_hash(meta: dict, arrays: dict) -> str:
    """Deterministic sha256 over header metadata and raw array bytes."""
    h = hashlib.sha256()
    h.update(json.dumps(meta, sort_keys=True).encode())
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(arr.astype(arr.dtype.newbyteorder("<").str, copy=False).tobytes())
    return h.hexdigest()


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form of a plain dict/list/scalar tree."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def format_value(v) -> str:
    """Render one CSV field; floats use repr for exact, stable round-trips."""
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows, annotations: dict | None = None) -> None:
    """Write a CSV with optional leading ``# key=value`` annotation lines."""
    with open(path, "w", newline="") as fh:
        for key, val in (annotations or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_csv(path):
    """Read a CSV written by :func:`write_csv`.

    Returns ``(annotations, columns, rows)`` with rows as lists of strings;
    empty fields stay empty strings (missing-value convention).
    """
    annotations = {}
    columns = None
    rows = []
    with open(path, "r", newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, val = body.partition("=")
                    annotations[key.strip()] = val.strip()
                continue
            if columns is None:
                columns = line.split(",")
            else:
                rows.append(line.split(","))
    if columns is None:
        raise StorageError(f"{path}: no header row")
    return annotations, columns, rows


def stream(*tags) -> np.random.Generator:
    """Deterministic generator derived from a tuple of integer tags.

    Components derive independent streams by tagging, so adding draws in
    one place never perturbs another's sequence.
    """
    return np.random.default_rng(np.random.SeedSequence([int(t) for t in tags]))


def epoch_to_iso(epoch_s: int) -> str:
    """Integer Unix seconds -> naive-UTC ISO-8601 string."""
    dt = datetime.fromtimestamp(int(epoch_s), tz=timezone.utc)
    return dt.replace(tzinfo=None).isoformat()


def iso_to_epoch(text: str) -> int:
    """ISO-8601 string (naive = UTC, or explicit offset) -> Unix seconds."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())
