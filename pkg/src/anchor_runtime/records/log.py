"""Append-only replay log.

File layout: ``b"ANCL" | version(u16) | flags(u16)`` followed by entries::

    length(u32) | crc32(u32) | ts_monotonic_ns(u64) | kind(u8) | body

`length` counts every byte after itself. An entry is first written with a
zero length and committed by overwriting the length last, so a crash leaves
either a complete entry or a tail that readers skip.
"""
import typing as t

import dataclasses
import enum
import os
import struct
import time
import zlib
from collections.abc import Iterator

from anchor_runtime.core.errors import IoFailure
from anchor_runtime.core.errors import LogCorrupt
from anchor_runtime.utils.log import getLogger

LOG_MAGIC = b"ANCL"
LOG_VERSION = 1
FILE_HEADER = struct.Struct("<4sHH")
ENTRY_LENGTH = struct.Struct("<I")
ENTRY_HEADER = struct.Struct("<IIQB")
# crc32 + ts + kind
ENTRY_OVERHEAD = ENTRY_HEADER.size - ENTRY_LENGTH.size

logger = getLogger(__name__)


class LogKind(enum.IntEnum):
    RECORD_WRITE = 1
    COMMAND = 2
    EVENT = 3


@dataclasses.dataclass(frozen=True)
class ReplayLogEntry:
    ts_monotonic_ns: int
    kind: LogKind
    body: bytes


def _checksum(ts: int, kind: int, body: bytes) -> int:
    return zlib.crc32(body, zlib.crc32(struct.pack("<QB", ts, kind)))


@dataclasses.dataclass
class LogScan:
    entries: list[ReplayLogEntry]
    #: Byte offset right after the last valid entry.
    valid_end: int
    corrupt_tail: bool


def scan_log(path: t.Union[str, os.PathLike]) -> LogScan:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"Cannot read log {path}: {e}") from e

    if len(data) < FILE_HEADER.size:
        raise LogCorrupt(f"Log {path} is missing its header")
    magic, version, _flags = FILE_HEADER.unpack_from(data, 0)
    if magic != LOG_MAGIC:
        raise LogCorrupt(f"Log {path} has an invalid magic")
    if version != LOG_VERSION:
        raise LogCorrupt(f"Log {path} has unsupported version {version}")

    entries = []
    offset = FILE_HEADER.size
    corrupt_tail = False
    last_ts = -1
    while offset < len(data):
        if offset + ENTRY_HEADER.size > len(data):
            corrupt_tail = True
            break
        length, crc, ts, kind = ENTRY_HEADER.unpack_from(data, offset)
        end = offset + ENTRY_LENGTH.size + length
        if length < ENTRY_OVERHEAD or end > len(data):
            corrupt_tail = True
            break
        body = data[offset + ENTRY_HEADER.size : end]
        if crc != _checksum(ts, kind, body) or ts <= last_ts:
            corrupt_tail = True
            break
        try:
            entries.append(ReplayLogEntry(ts, LogKind(kind), body))
        except ValueError:
            corrupt_tail = True
            break
        last_ts = ts
        offset = end

    if corrupt_tail:
        logger.warning(
            "Skipping corrupt log tail",
            extra={
                "data": {
                    "path": str(path),
                    "offset": offset,
                    "skipped_bytes": len(data) - offset,
                }
            },
        )
    return LogScan(entries=entries, valid_end=offset, corrupt_tail=corrupt_tail)


def replay_log(path: t.Union[str, os.PathLike]) -> Iterator[ReplayLogEntry]:
    """Yield the committed entries of a log in append order."""
    yield from scan_log(path).entries


class ReplayLog:
    """Writer side of a replay log.

    Opening an existing log truncates any torn tail so new entries stay
    reachable.
    """

    def __init__(
        self, path: t.Union[str, os.PathLike], *, flush_every: int = 1
    ) -> None:
        self.path = path
        self.flush_every = flush_every
        self.last_ts = -1
        self._pending_flush = 0
        try:
            self.fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
            size = os.fstat(self.fd).st_size
            if size == 0:
                os.write(self.fd, FILE_HEADER.pack(LOG_MAGIC, LOG_VERSION, 0))
                self.end = FILE_HEADER.size
            else:
                scan = scan_log(path)
                if scan.entries:
                    self.last_ts = scan.entries[-1].ts_monotonic_ns
                if scan.valid_end < size:
                    os.ftruncate(self.fd, scan.valid_end)
                self.end = scan.valid_end
        except OSError as e:
            raise IoFailure(f"Cannot open log {path}: {e}") from e

    def append(self, entry: ReplayLogEntry) -> None:
        if entry.ts_monotonic_ns <= self.last_ts:
            raise LogCorrupt(
                f"Entry timestamp {entry.ts_monotonic_ns} is not after {self.last_ts}"
            )
        body = bytes(entry.body)
        staged = (
            ENTRY_HEADER.pack(
                0,
                _checksum(entry.ts_monotonic_ns, entry.kind, body),
                entry.ts_monotonic_ns,
                int(entry.kind),
            )
            + body
        )
        try:
            os.pwrite(self.fd, staged, self.end)
            os.pwrite(
                self.fd, ENTRY_LENGTH.pack(len(staged) - ENTRY_LENGTH.size), self.end
            )
        except OSError as e:
            raise IoFailure(f"Cannot append to log {self.path}: {e}") from e
        self.end += len(staged)
        self.last_ts = entry.ts_monotonic_ns

        self._pending_flush += 1
        if self.flush_every and self._pending_flush >= self.flush_every:
            self.flush()

    def record(self, kind: LogKind, body: bytes) -> ReplayLogEntry:
        """Append `body` stamped with a strictly increasing monotonic time."""
        entry = ReplayLogEntry(
            ts_monotonic_ns=max(time.monotonic_ns(), self.last_ts + 1),
            kind=kind,
            body=body,
        )
        self.append(entry)
        return entry

    def flush(self) -> None:
        self._pending_flush = 0
        try:
            os.fsync(self.fd)
        except OSError as e:
            raise IoFailure(f"Cannot flush log {self.path}: {e}") from e

    def close(self) -> None:
        if self.fd < 0:
            return
        if self._pending_flush:
            self.flush()
        os.close(self.fd)
        self.fd = -1

    def __enter__(self) -> "ReplayLog":
        return self

    def __exit__(self, *exc_info: t.Any) -> None:
        self.close()


def append_log(log: ReplayLog, entry: ReplayLogEntry) -> None:
    log.append(entry)
