"""Binary tensor container.

Layout: magic ``OMND`` | format version (u32 LE) | manifest length (u64 LE) |
manifest JSON (UTF-8) | crc32 of the manifest bytes (u32 LE) | raw payloads.
The manifest lists {name, shape, dtype, offset} per tensor with offsets
relative to the payload section; payloads are little-endian and round-trip
bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"OMND"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class CheckpointError(ValueError):
    """Raised when a tensor container fails validation."""


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray],
                 magic: bytes = MAGIC, meta: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        code = arr.dtype.newbyteorder("<").str
        if code not in _DTYPES:
            raise CheckpointError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code,
                        "offset": len(payload)})
        payload.extend(raw)
    doc = {"tensors": entries}
    if meta is not None:
        doc["meta"] = meta
    manifest = json.dumps(doc, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(struct.pack("<I", zlib.crc32(manifest)))
        fh.write(bytes(payload))


def load_manifest(path: str | Path, magic: bytes = MAGIC) -> dict:
    """Validate the framing and return the parsed manifest (header) only."""
    blob = Path(path).read_bytes()
    return _parse(blob, magic)[0]


def load_tensors(path: str | Path, magic: bytes = MAGIC,
                 with_meta: bool = False):
    blob = Path(path).read_bytes()
    manifest, payload = _parse(blob, magic)
    out: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"tensor '{entry['name']}' has unknown dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        start = entry["offset"]
        if start + nbytes > len(payload):
            raise CheckpointError(
                f"truncated payload for '{entry['name']}': needs bytes "
                f"[{start}, {start + nbytes}) of {len(payload)}")
        arr = np.frombuffer(payload[start:start + nbytes], dtype=dtype).reshape(shape)
        out[entry["name"]] = arr.copy()
    if with_meta:
        return out, manifest.get("meta", {})
    return out


def _parse(blob: bytes, magic: bytes):
    if len(blob) < 16:
        raise CheckpointError(f"file too short ({len(blob)} bytes) to hold a header")
    if blob[:4] != magic:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + mlen
    if len(blob) < header_end + 4:
        raise CheckpointError(f"truncated manifest: need {header_end + 4} bytes, have {len(blob)}")
    manifest_bytes = blob[16:header_end]
    (crc,) = struct.unpack("<I", blob[header_end:header_end + 4])
    if zlib.crc32(manifest_bytes) != crc:
        raise CheckpointError("manifest checksum mismatch (corrupted header)")
    try:
        manifest = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    return manifest, blob[header_end + 4:]
