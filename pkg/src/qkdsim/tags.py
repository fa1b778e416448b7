"""Time-tag streams and their CSV / binary file formats.

Binary layout: a 16-byte header (magic ``QTAG``, little-endian u16 version 1,
10 reserved zero bytes) followed by packed records of u64 ``time_ps`` and u8
``channel``.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"QTAG"
VERSION = 1
HEADER = struct.Struct("<4sH10x")
RECORD = np.dtype([("time_ps", "<u8"), ("channel", "u1")])  # packed, 9 bytes
N_CHANNELS = 4


def channel_of(basis, outcome):
    """Detector index ``2 * basis + outcome`` (basis 0 = z, 1 = x)."""
    return 2 * np.asarray(basis) + np.asarray(outcome)


@dataclass(frozen=True)
class TimeTag:
    time: int
    channel: int

    def __post_init__(self):
        if self.time < 0:
            raise FormatError("tag time must be >= 0")
        if not 0 <= self.channel < N_CHANNELS:
            raise FormatError(f"channel must be in 0..{N_CHANNELS - 1}")

    @property
    def basis(self) -> int:
        return self.channel >> 1

    @property
    def outcome(self) -> int:
        return self.channel & 1


@dataclass(frozen=True, eq=False)
class TagStream:
    """Time-ordered detection events of one party.

    ``times`` are integer picoseconds (int64), ``channels`` uint8 detector
    indices. ``clock`` records the ``(offset_s, drift)`` used in synthesis,
    if any.
    """

    times: np.ndarray
    channels: np.ndarray
    party: str = ""
    clock: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.int64)
        c = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if t.shape != c.shape or t.ndim != 1:
            raise FormatError("times and channels must be 1-d arrays of equal length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "channels", c)

    def validate(self):
        if self.times.size:
            if self.times[0] < 0:
                raise FormatError("negative tag time")
            if np.any(np.diff(self.times) < 0):
                raise FormatError("tag times are not sorted")
            if self.channels.max() >= N_CHANNELS:
                raise FormatError("channel index out of range")
        return self

    def __len__(self):
        return int(self.times.size)

    def __iter__(self):
        for t, c in zip(self.times.tolist(), self.channels.tolist()):
            yield TimeTag(t, c)

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.channels, other.channels)

    @property
    def basis(self) -> np.ndarray:
        return self.channels >> 1

    @property
    def outcome(self) -> np.ndarray:
        return self.channels & 1

    def counts_per_channel(self) -> np.ndarray:
        return np.bincount(self.channels, minlength=N_CHANNELS)

    def window(self, t0_ps: int, t1_ps: int) -> "TagStream":
        lo, hi = np.searchsorted(self.times, [t0_ps, t1_ps])
        return TagStream(self.times[lo:hi], self.channels[lo:hi], self.party, self.clock)

    @classmethod
    def empty(cls, party=""):
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8), party)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_binary(stream: TagStream) -> bytes:
    rec = np.empty(len(stream), dtype=RECORD)
    rec["time_ps"] = stream.times
    rec["channel"] = stream.channels
    return HEADER.pack(MAGIC, VERSION) + rec.tobytes()


def from_binary(data: bytes, party: str = "") -> TagStream:
    if len(data) < HEADER.size:
        raise FormatError("file shorter than the 16-byte header")
    magic, version = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    body = memoryview(data)[HEADER.size:]
    if len(body) % RECORD.itemsize:
        raise FormatError("truncated record at end of file")
    rec = np.frombuffer(body, dtype=RECORD)
    times = rec["time_ps"]
    if times.size and times.max() > np.iinfo(np.int64).max:
        raise FormatError("time value exceeds int64 range")
    return TagStream(times.astype(np.int64), rec["channel"].copy(), party).validate()


def to_csv(stream: TagStream) -> bytes:
    buf = io.StringIO()
    buf.write("time_ps,channel\n")
    if len(stream):
        np.savetxt(buf, np.column_stack([stream.times, stream.channels.astype(np.int64)]),
                   fmt="%d", delimiter=",")
    return buf.getvalue().encode()


def from_csv(data: bytes, party: str = "") -> TagStream:
    text = data.decode()
    lines = text.splitlines()
    if not lines or lines[0].strip().replace(" ", "") != "time_ps,channel":
        raise FormatError("CSV header must be 'time_ps,channel'")
    if len(lines) == 1 or not "".join(lines[1:]).strip():
        return TagStream.empty(party)
    try:
        arr = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"malformed tag CSV: {exc}") from None
    if arr.shape[1] != 2:
        raise FormatError("tag CSV rows need exactly two fields")
    return TagStream(arr[:, 0], arr[:, 1].astype(np.uint8), party).validate()


def _is_binary_path(path) -> bool:
    return not os.fspath(path).lower().endswith(".csv")


def write_tags(path, stream: TagStream):
    """Write ``stream``; ``.csv`` paths get CSV, everything else binary."""
    data = to_csv(stream) if not _is_binary_path(path) else to_binary(stream)
    atomic_write_bytes(path, data)


def read_tags(path, party: str = "") -> TagStream:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == MAGIC:
        return from_binary(data, party)
    return from_csv(data, party)
