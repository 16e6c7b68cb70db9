"""Time-tag streams and their on-disk formats.

Binary layout (little endian)::

    header   4s   magic b"QTT1"
             u32  record count (0xFFFFFFFF if it does not fit; then the
                  count follows from the file size)
             u64  stream epoch, the timestamp value of run time zero
    records  u64  timestamp_ps
             u8   channel (0 = transmitted port, 1 = reflected port)
             u8   basis (0 = H/V, 1 = P/M)

A plain-text variant with a ``timestamp_ps,channel,basis`` header is read
and written as well.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"QTT1"
HEADER = struct.Struct("<4sIQ")
RECORD_DTYPE = np.dtype([("timestamp_ps", "<u8"), ("channel", "u1"), ("basis", "u1")])
assert RECORD_DTYPE.itemsize == 10

TEXT_HEADER = "timestamp_ps,channel,basis"


class TagFormatError(ValueError):
    pass


@dataclass
class TagStream:
    """One party's detection record.

    ``t`` is int64 picoseconds in memory (differences are signed); files store
    it as u64. ``channel`` doubles as the measured bit: 0 for H or P, 1 for
    V or M.
    """

    t: np.ndarray
    channel: np.ndarray
    basis: np.ndarray
    epoch_ps: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.uint8)
        self.basis = np.asarray(self.basis, dtype=np.uint8)
        if not (self.t.shape == self.channel.shape == self.basis.shape):
            raise ValueError("timestamp, channel and basis arrays differ in length")

    def __len__(self):
        return int(self.t.shape[0])

    @property
    def bits(self):
        return self.channel

    def is_sorted(self):
        return bool(np.all(np.diff(self.t) >= 0))

    def shifted(self, delta_ps):
        return TagStream(self.t + np.int64(delta_ps), self.channel, self.basis, self.epoch_ps, dict(self.meta))

    def span_s(self):
        if len(self) == 0:
            return 0.0
        return (int(self.t[-1]) - int(self.t[0])) * 1e-12

    def to_records(self):
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        if len(self) and self.t[0] < 0:
            raise TagFormatError("negative timestamps cannot be stored as u64")
        rec["timestamp_ps"] = self.t
        rec["channel"] = self.channel
        rec["basis"] = self.basis
        return rec


def write_tags(path, stream: TagStream):
    path = Path(path)
    n = len(stream)
    count = n if n < 0xFFFFFFFF else 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, count, int(stream.epoch_ps)))
        stream.to_records().tofile(fh)
    return path


def read_tags(path) -> TagStream:
    """Read a binary or text time-tag file, detected from its first bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    if head[:4] == MAGIC:
        return _read_binary(path, head)
    return read_tags_text(path)


def _read_binary(path, head):
    if len(head) < HEADER.size:
        raise TagFormatError(f"{path}: truncated header")
    _, count, epoch = HEADER.unpack(head)
    body = path.stat().st_size - HEADER.size
    if body % RECORD_DTYPE.itemsize:
        raise TagFormatError(f"{path}: body is not a whole number of records")
    n = body // RECORD_DTYPE.itemsize
    if count != 0xFFFFFFFF and count != n:
        raise TagFormatError(f"{path}: header says {count} records, file holds {n}")
    rec = np.fromfile(path, dtype=RECORD_DTYPE, offset=HEADER.size)
    if n and rec["timestamp_ps"].max() > np.iinfo(np.int64).max:
        raise TagFormatError(f"{path}: timestamps exceed the int64 range")
    return TagStream(rec["timestamp_ps"].astype(np.int64), rec["channel"], rec["basis"], int(epoch))


def write_tags_text(path, stream: TagStream):
    path = Path(path)
    data = np.column_stack([stream.t, stream.channel.astype(np.int64), stream.basis.astype(np.int64)])
    np.savetxt(path, data, fmt="%d", delimiter=",", header=TEXT_HEADER, comments="")
    return path


def read_tags_text(path) -> TagStream:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().strip()
    if first != TEXT_HEADER:
        raise TagFormatError(f"{path}: expected header {TEXT_HEADER!r}, found {first[:40]!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        data = np.empty((0, 3), dtype=np.int64)
    if data.shape[1] != 3:
        raise TagFormatError(f"{path}: expected three columns")
    if np.any((data[:, 1] > 1) | (data[:, 1] < 0)) or np.any((data[:, 2] > 1) | (data[:, 2] < 0)):
        raise TagFormatError(f"{path}: channel and basis must be 0 or 1")
    return TagStream(data[:, 0], data[:, 1], data[:, 2])


def write_truth(path, pair_id, alice_index, bob_index):
    path = Path(path)
    data = np.column_stack([pair_id, alice_index, bob_index]).astype(np.int64)
    np.savetxt(path, data, fmt="%d", delimiter=",", header="pair_id,alice_index,bob_index", comments="")
    return path


def read_truth(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        data = np.empty((0, 3), dtype=np.int64)
    return data[:, 0], data[:, 1], data[:, 2]
