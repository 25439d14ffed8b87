"""Shared on-disk container: magic + JSON header + float64 payload.

Layout: 8 ASCII magic bytes, a 4-byte little-endian header length, a
UTF-8 JSON header, then the payload — the declared arrays concatenated
as little-endian float64 in row-major order. The header carries the
array shapes and a CRC32 of the payload, so truncation and shape drift
are caught on load. Serialization is canonical (sorted keys, fixed
separators): identical content always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np


class ContainerError(ValueError):
    pass


class ChecksumError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


def write_container(path, magic, header, arrays):
    """Write named float64 arrays with a self-describing header.

    `arrays` is an ordered dict name -> ndarray; order is preserved and
    recorded in the header.
    """
    if len(magic) != 8:
        raise ContainerError(f"magic {magic!r} must be 8 bytes")
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    full_header = dict(header)
    full_header["arrays"] = [
        {"name": name, "shape": list(a.shape)} for name, a in arrays.items()]
    full_header["crc32"] = zlib.crc32(payload) & 0xFFFFFFFF
    blob = json.dumps(full_header, sort_keys=True,
                      separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(magic.encode("ascii"))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_container(path, magic):
    """Read back (header, arrays); verifies magic, checksum, and shapes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise ContainerError(f"{path}: file too short")
    found = data[:8].decode("ascii", errors="replace")
    if found != magic:
        raise VersionError(f"{path}: magic {found!r}, expected {magic!r}")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise ContainerError(f"{path}: truncated header")
    header = json.loads(data[12:12 + hlen])
    payload = data[12 + hlen:]
    if (zlib.crc32(payload) & 0xFFFFFFFF) != header["crc32"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ContainerError(f"{path}: payload shorter than declared shapes")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise ContainerError(f"{path}: payload longer than declared shapes")
    return header, arrays
