"""Flat binary container for named float32 tensors.

Layout: magic ``AFTB``, version byte 1, little-endian u32 header length,
UTF-8 JSON header (a list of ``{name, dtype, shape, byte_offset}``
records), then the concatenated row-major little-endian float32 payloads.
Offsets are relative to the payload start. A reserved ``__meta__`` tensor
carries an optional JSON metadata blob as byte values, keeping the header
schema uniform.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"AFTB"
VERSION = 1
META_NAME = "__meta__"


def save(tensors: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    """Write named tensors (cast to float32) plus optional JSON metadata."""
    entries = []
    payloads = []
    offset = 0
    items = dict(tensors)
    if meta is not None:
        blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
        items[META_NAME] = blob.astype(np.float32)
    for name, arr in items.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape), "byte_offset": offset})
        payloads.append(arr.tobytes())
        offset += len(payloads[-1])
    header = json.dumps(entries).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(bytes([VERSION]))
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for chunk in payloads:
                fh.write(chunk)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def load(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Read a bundle back; returns (tensors, metadata-or-None)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None

    if len(blob) < 9 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a tensor bundle (bad magic)")
    if blob[4] != VERSION:
        raise FormatError(f"{path}: unsupported bundle version {blob[4]}")
    header_len = int(np.frombuffer(blob[5:9], dtype="<u4")[0])
    header_end = 9 + header_len
    if header_end > len(blob):
        raise FormatError(f"{path}: truncated header")
    try:
        entries = json.loads(blob[9:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header JSON: {exc}") from None

    payload = blob[header_end:]
    tensors: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    for entry in entries:
        name = entry["name"]
        if name in seen:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        seen.add(name)
        if entry.get("dtype") != "f32":
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 4 * count
        if start < 0 or end > len(payload):
            raise FormatError(f"{path}: tensor {name!r} payload out of bounds")
        tensors[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()

    meta = None
    if META_NAME in tensors:
        raw = tensors.pop(META_NAME)
        try:
            meta = json.loads(bytes(raw.astype(np.uint8)).decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: bad metadata blob: {exc}") from None
    return tensors, meta


def require(tensors: dict[str, np.ndarray], names: list[str], context: str) -> None:
    """Raise FormatError naming the first missing tensor."""
    for name in names:
        if name not in tensors:
            raise FormatError(f"{context}: bundle is missing tensor {name!r}")
