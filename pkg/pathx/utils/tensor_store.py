"""
Binary tensor container shared by ViT weights (.vitw) and autoencoder models (.aenc).

Layout (all integers little-endian):
    magic        8 bytes   b"PATHXTNS"
    version      uint32
    header_len   uint32
    header       UTF-8 JSON: kind, meta, tensor table (name, shape, offset, count)
    data         float64 little-endian, tensors back to back
    checksum     32 bytes  SHA-256 of everything above
"""

import hashlib
import json
import logging
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from pathx.errors import ChecksumError, InputFormatError, WeightsMissingError

logger = logging.getLogger(__name__)

MAGIC = b"PATHXTNS"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DIGEST_SIZE = 32


def write_container(path: str, kind: str, meta: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> str:
    """Write tensors with a versioned header and trailing checksum; returns the hex digest"""
    table = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        array = np.ascontiguousarray(value, dtype="<f8")
        table.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        chunks.append(array.tobytes())
        offset += array.nbytes

    header = json.dumps({"kind": kind, "meta": meta, "tensors": table}, sort_keys=True, separators=(",", ":"))
    header_bytes = header.encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)
    digest = hashlib.sha256(body).digest()

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(body)
        f.write(digest)

    logger.debug(f"Wrote {kind} container with {len(table)} tensors to {path}")
    return digest.hex()


def read_container(path: str, expected_kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read and verify a container; returns (meta, tensors)"""
    if not os.path.exists(path):
        raise WeightsMissingError(f"weights file not found: {path}")

    with open(path, "rb") as f:
        raw = f.read()

    if len(raw) < _PREFIX.size + _DIGEST_SIZE:
        raise ChecksumError(f"{path} is truncated ({len(raw)} bytes)")

    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"checksum mismatch in {path}")

    magic, version, header_len = _PREFIX.unpack_from(body, 0)
    if magic != MAGIC:
        raise InputFormatError(f"{path} is not a PATH-X tensor container")
    if version != VERSION:
        raise InputFormatError(f"{path} has unsupported container version {version}")

    header_end = _PREFIX.size + header_len
    try:
        header = json.loads(body[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputFormatError(f"{path} has an unreadable header: {e}")

    if header.get("kind") != expected_kind:
        raise InputFormatError(f"{path} holds '{header.get('kind')}', expected '{expected_kind}'")

    data = body[header_end:]
    tensors = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        stop = start + 8 * entry["count"]
        if stop > len(data):
            raise ChecksumError(f"tensor '{entry['name']}' runs past the end of {path}")
        array = np.frombuffer(data[start:stop], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = array.reshape(entry["shape"])

    return header.get("meta", {}), tensors
