"""Length-prefixed binary container shared by dataset and checkpoint files.

Layout: magic ``MTLB``, u32 version, u64 record count, then each record as a
u64 byte length followed by the payload. All integers little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

from .errors import DataFormatError

MAGIC = b"MTLB"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 101


def write_container(path, version: int, records: list[bytes]):
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", version, len(records)))
        for rec in records:
            f.write(struct.pack("<Q", len(rec)))
            f.write(rec)


def read_container(path, expected_version: int) -> list[bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DataFormatError(f"{path}: not a {MAGIC.decode()} container")
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != expected_version:
        raise DataFormatError(f"{path}: version {version}, expected {expected_version}")
    records = []
    offset = 16
    for i in range(count):
        if offset + 8 > len(blob):
            raise DataFormatError(f"{path}: truncated at record {i}")
        (length,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        if offset + length > len(blob):
            raise DataFormatError(f"{path}: truncated payload in record {i}")
        records.append(blob[offset : offset + length])
        offset += length
    if offset != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return records


class Cursor:
    """Sequential reader over one record's bytes."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise DataFormatError("record truncated")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataFormatError("record truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def done(self) -> bool:
        return self.pos == len(self.buf)
