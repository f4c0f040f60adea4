"""Canonical Records region: a memory-mapped file of fixed-layout arrays.

Layout (little-endian)::

    header     64 bytes   magic "ANCR", format version, schema version, ...
    directory  64 x 64    one descriptor per group, holding its seq counter
    body                  group arrays at 8-byte aligned offsets

Each group carries its own sequence counter. The writer of a group bumps it
to odd before touching the values and back to even after, readers retry
until they copy under unchanged even counters. A region-wide version is the
sum of the group counters.
"""
import typing as t

import contextlib
import dataclasses
import fcntl
import os
import struct
import tempfile
from collections.abc import Iterable
from collections.abc import Iterator
from collections.abc import Mapping
from collections.abc import Sequence

import numpy as np

from anchor_runtime.core.errors import ArityMismatch
from anchor_runtime.core.errors import ContendedTimeout
from anchor_runtime.core.errors import IoFailure
from anchor_runtime.core.errors import NameCollision
from anchor_runtime.core.errors import RegionBadMagic
from anchor_runtime.core.errors import RoleViolation
from anchor_runtime.core.errors import SchemaInvalid
from anchor_runtime.core.errors import UnknownGroup
from anchor_runtime.core.errors import VersionUnsupported
from anchor_runtime.utils.log import getLogger
from anchor_runtime.utils.options import canonical_json

from .log import LogKind
from .log import ReplayLog
from .schema import BODY_OFFSET
from .schema import DESCRIPTOR_SIZE
from .schema import HEADER_SIZE
from .schema import MAX_GROUPS
from .schema import ElementType
from .schema import FieldGroup
from .schema import RecordSchema
from .schema import Role
from .schema import group_offsets
from .schema import region_length

REGION_MAGIC = b"ANCR"
FORMAT_VERSION = 1
DEFAULT_MAX_RETRIES = 64

# magic, format_version, flags, schema_version, group_count, region_length
HEADER = struct.Struct("<4sHHIIQ")
# name, element_type, writer_role, _, arity, width, _, offset, counter
DESCRIPTOR = struct.Struct("<32sBBHIIIQQ")
COUNTER_OFFSET = 56

_ELEMENT_CODES = {ElementType.I64: 1, ElementType.F64: 2, ElementType.BYTES: 3}
_ROLE_CODES = {Role.INGESTION: 1, Role.FEEDBACK: 2}

PathLike = t.Union[str, os.PathLike]


@dataclasses.dataclass(frozen=True)
class Snapshot:
    schema_version: int
    #: Sum of the counters of the copied groups. Always even.
    version_counter: int
    values: dict[str, np.ndarray]
    counters: dict[str, int]

    def __getitem__(self, group: str) -> np.ndarray:
        return self.values[group]

    def as_lists(self) -> dict[str, list]:
        return {name: value.tolist() for name, value in self.values.items()}


def _pack_header(schema: RecordSchema) -> bytes:
    header = HEADER.pack(
        REGION_MAGIC,
        FORMAT_VERSION,
        0,
        schema.schema_version,
        len(schema.field_groups),
        region_length(schema.field_groups),
    )
    return header.ljust(HEADER_SIZE, b"\0")


def _pack_descriptor(group: FieldGroup, offset: int) -> bytes:
    return DESCRIPTOR.pack(
        group.name.encode("ascii"),
        _ELEMENT_CODES[group.element_type],
        _ROLE_CODES[group.writer_role],
        0,
        group.arity,
        group.item_size,
        0,
        offset,
        0,
    )


def _unpack_schema(raw: bytes, path: PathLike) -> tuple[RecordSchema, int]:
    if len(raw) < BODY_OFFSET:
        raise RegionBadMagic(f"Region {path} is too short")
    magic, format_version, _flags, schema_version, count, length = HEADER.unpack_from(
        raw, 0
    )
    if magic != REGION_MAGIC:
        raise RegionBadMagic(f"Region {path} has an invalid magic")
    if format_version != FORMAT_VERSION:
        raise VersionUnsupported(
            f"Region {path} has unsupported format version {format_version}"
        )
    if count > MAX_GROUPS:
        raise SchemaInvalid(f"Region {path} declares {count} groups")

    elements = {v: k for k, v in _ELEMENT_CODES.items()}
    roles = {v: k for k, v in _ROLE_CODES.items()}
    groups = []
    for i in range(count):
        name, element, role, _, arity, width, _, _offset, _ = DESCRIPTOR.unpack_from(
            raw, HEADER_SIZE + i * DESCRIPTOR_SIZE
        )
        try:
            groups.append(
                FieldGroup(
                    name=name.rstrip(b"\0").decode("ascii"),
                    element_type=elements[element],
                    arity=arity,
                    writer_role=roles[role],
                    width=width,
                )
            )
        except (KeyError, UnicodeDecodeError) as e:
            raise SchemaInvalid(f"Region {path} has a corrupt descriptor {i}") from e
    return RecordSchema(tuple(groups), schema_version), length


class RegionHandle:
    """A process-local mapping of a region.

    Handles opened with a writer `role` may write the groups owned by that
    role. A handle must not be shared between threads.
    """

    def __init__(
        self,
        path: PathLike,
        *,
        role: t.Optional[Role] = None,
        maintenance: bool = False,
        max_retries: int = DEFAULT_MAX_RETRIES,
        log: t.Optional[ReplayLog] = None,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.path = os.fspath(path)
        self.role = Role(role) if role is not None else None
        self.writable = self.role is not None or maintenance
        self.max_retries = max_retries
        self.log = log
        self._lock_fd = -1
        self._mm: t.Optional[np.memmap] = None

        if self.writable:
            try:
                self._lock_fd = os.open(self.path, os.O_RDWR)
            except OSError as e:
                raise IoFailure(f"Cannot open region {self.path}: {e}") from e
            # Writers share the lock; schema maintenance takes it exclusively.
            fcntl.flock(self._lock_fd, fcntl.LOCK_SH)
        try:
            self._map()
        except BaseException:
            self.close()
            raise

    def _map(self) -> None:
        try:
            mm = np.memmap(self.path, dtype=np.uint8, mode="r+" if self.writable else "r")
        except (OSError, ValueError) as e:
            raise IoFailure(f"Cannot map region {self.path}: {e}") from e

        schema, length = _unpack_schema(bytes(mm[:BODY_OFFSET]), self.path)
        if len(mm) < length:
            raise IoFailure(
                f"Region {self.path} is truncated ({len(mm)} < {length} bytes)"
            )
        self._mm = mm
        self.schema = schema
        self.offsets = group_offsets(schema.field_groups)
        self._counters: dict[str, np.ndarray] = {}
        self._values: dict[str, np.ndarray] = {}
        for i, group in enumerate(schema.field_groups):
            counter_at = HEADER_SIZE + i * DESCRIPTOR_SIZE + COUNTER_OFFSET
            self._counters[group.name] = mm[counter_at : counter_at + 8].view("<u8")
            offset = self.offsets[group.name]
            self._values[group.name] = mm[offset : offset + group.nbytes].view(
                group.dtype
            )

    @property
    def schema_version(self) -> int:
        return self.schema.schema_version

    @property
    def version_counter(self) -> int:
        return sum(int(c[0]) for c in self._counters.values())

    def counter(self, group: str) -> int:
        return int(self._counter_view(group)[0])

    def _group(self, name: str) -> FieldGroup:
        group = self.schema.group(name)
        if group is None and self.refresh():
            group = self.schema.group(name)
        if group is None:
            raise UnknownGroup(f"Unknown group: {name!r}")
        return group

    def _counter_view(self, name: str) -> np.ndarray:
        self._group(name)
        return self._counters[name]

    def refresh(self) -> bool:
        """Remap the file if its schema grew since this handle mapped it."""
        with open(self.path, "rb") as f:
            raw = f.read(HEADER.size)
        _, _, _, schema_version, _, _ = HEADER.unpack(raw)
        if schema_version == self.schema.schema_version:
            return False
        self._map()
        return True

    def _coerce(self, group: FieldGroup, values: t.Any) -> np.ndarray:
        if group.element_type is ElementType.BYTES:
            items = [bytes(v) for v in values]
            if any(len(v) > group.width for v in items):
                raise ArityMismatch(
                    f"Group {group.name!r} holds at most {group.width} bytes per element"
                )
            array = np.array(items, dtype=group.dtype)
        else:
            try:
                array = np.asarray(values, dtype=group.dtype)
            except (TypeError, ValueError) as e:
                raise ArityMismatch(f"Invalid values for {group.name!r}: {e}") from e
        if array.shape != (group.arity,):
            raise ArityMismatch(
                f"Group {group.name!r} expects {group.arity} values, got {array.shape}"
            )
        return array

    def _check_role(self, group: FieldGroup) -> None:
        if self.role is not group.writer_role:
            raise RoleViolation(
                f"Handle role {self.role} cannot write {group.writer_role} "
                f"group {group.name!r}"
            )

    @contextlib.contextmanager
    def write_section(self, names: Iterable[str]) -> Iterator[None]:
        """Hold the counters of `names` odd for the duration of the block."""
        groups = [self._group(name) for name in names]
        for group in groups:
            self._check_role(group)
        counters = [self._counters[g.name] for g in groups]
        for counter in counters:
            counter += 1
        try:
            yield
        finally:
            for counter in counters:
                counter += 1

    def write_groups(self, values: Mapping[str, t.Any]) -> int:
        staged = {}
        for name, group_values in values.items():
            group = self._group(name)
            self._check_role(group)
            staged[name] = self._coerce(group, group_values)

        with self.write_section(staged):
            for name, array in staged.items():
                self._values[name][:] = array

        if self.log is not None:
            self._log_write(staged)
        return self.version_counter

    def write_group(self, group: str, values: t.Any) -> int:
        return self.write_groups({group: values})

    def _log_write(self, staged: Mapping[str, np.ndarray]) -> None:
        assert self.log is not None  # noqa: S101
        body = {
            name: {
                "counter": self.counter(name),
                "values": [
                    v.hex() if isinstance(v, bytes) else v for v in array.tolist()
                ],
            }
            for name, array in staged.items()
        }
        self.log.record(LogKind.RECORD_WRITE, canonical_json(body))

    def read_snapshot(
        self,
        groups: t.Optional[Sequence[str]] = None,
        *,
        max_retries: t.Optional[int] = None,
    ) -> Snapshot:
        names = list(groups) if groups is not None else self.schema.names
        for name in names:
            self._group(name)
        counters = [self._counters[n] for n in names]
        views = [self._values[n] for n in names]
        retries = self.max_retries if max_retries is None else max_retries

        for _ in range(max(1, retries)):
            before = [int(c[0]) for c in counters]
            if any(c & 1 for c in before):
                continue
            copies = [v.copy() for v in views]
            after = [int(c[0]) for c in counters]
            if before == after:
                return Snapshot(
                    schema_version=self.schema.schema_version,
                    version_counter=sum(before),
                    values=dict(zip(names, copies)),
                    counters=dict(zip(names, before)),
                )
        raise ContendedTimeout(
            f"Groups {names} not stable after {retries} attempts"
        )

    def extend_schema(self, new_groups: Iterable[FieldGroup]) -> int:
        if not self.writable:
            raise RoleViolation("Schema maintenance requires a writable handle")
        new_groups = list(new_groups)
        try:
            fcntl.flock(self._lock_fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as e:
            raise IoFailure(
                f"Region {self.path} still has writers attached, stop them first"
            ) from e
        try:
            self.refresh()
            for group in new_groups:
                if self.schema.group(group.name) is not None:
                    raise NameCollision(f"Group {group.name!r} already exists")
            schema = self.schema.extended(new_groups)
            schema.validate()

            offsets = group_offsets(schema.field_groups)
            start = len(self.schema.field_groups)
            length = region_length(schema.field_groups)
            try:
                with open(self.path, "r+b") as f:
                    for i, group in enumerate(new_groups, start=start):
                        f.seek(HEADER_SIZE + i * DESCRIPTOR_SIZE)
                        f.write(_pack_descriptor(group, offsets[group.name]))
                    f.truncate(length)
                    f.seek(0)
                    f.write(_pack_header(schema))
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as e:
                raise IoFailure(f"Cannot extend region {self.path}: {e}") from e
            self._map()
            self.logger.info(
                "Extended region schema",
                extra={
                    "data": {
                        "path": self.path,
                        "schema_version": schema.schema_version,
                        "groups": [g.name for g in new_groups],
                    }
                },
            )
            return schema.schema_version
        finally:
            fcntl.flock(self._lock_fd, fcntl.LOCK_SH)

    def close(self) -> None:
        self._counters = {}
        self._values = {}
        self._mm = None
        if self._lock_fd >= 0:
            os.close(self._lock_fd)
            self._lock_fd = -1

    def __enter__(self) -> "RegionHandle":
        return self

    def __exit__(self, *exc_info: t.Any) -> None:
        self.close()


def create_region(
    path: PathLike,
    schema: RecordSchema,
    *,
    role: t.Optional[Role] = None,
    overwrite: bool = False,
    max_retries: int = DEFAULT_MAX_RETRIES,
    log: t.Optional[ReplayLog] = None,
) -> RegionHandle:
    """Create a zeroed region file and map it.

    The file is built aside and renamed in place, so concurrent openers never
    observe a partial header.
    """
    schema.validate()
    path = os.fspath(path)
    if os.path.exists(path) and not overwrite:
        raise IoFailure(f"Region {path} already exists")

    directory = bytearray(MAX_GROUPS * DESCRIPTOR_SIZE)
    offsets = group_offsets(schema.field_groups)
    for i, group in enumerate(schema.field_groups):
        start = i * DESCRIPTOR_SIZE
        directory[start : start + DESCRIPTOR_SIZE] = _pack_descriptor(
            group, offsets[group.name]
        )
    body_size = region_length(schema.field_groups) - BODY_OFFSET

    try:
        fd, tmp_path = tempfile.mkstemp(
            dir=os.path.dirname(os.path.abspath(path)), prefix=".ancr-"
        )
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(_pack_header(schema))
                f.write(directory)
                f.write(bytes(body_size))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, path)
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(tmp_path)
            raise
    except OSError as e:
        raise IoFailure(f"Cannot create region {path}: {e}") from e

    return RegionHandle(
        path, role=role, maintenance=True, max_retries=max_retries, log=log
    )


def open_region(
    path: PathLike,
    *,
    role: t.Optional[Role] = None,
    maintenance: bool = False,
    max_retries: int = DEFAULT_MAX_RETRIES,
    log: t.Optional[ReplayLog] = None,
) -> RegionHandle:
    if not os.path.exists(path):
        raise IoFailure(f"Region {path} does not exist")
    return RegionHandle(
        path, role=role, maintenance=maintenance, max_retries=max_retries, log=log
    )


def write_group(h: RegionHandle, group: str, values: t.Any) -> int:
    return h.write_group(group, values)


def write_groups(h: RegionHandle, values: Mapping[str, t.Any]) -> int:
    return h.write_groups(values)


def read_snapshot(
    h: RegionHandle,
    groups: t.Optional[Sequence[str]] = None,
    *,
    max_retries: t.Optional[int] = None,
) -> Snapshot:
    return h.read_snapshot(groups, max_retries=max_retries)


def extend_schema(h: RegionHandle, new_groups: Iterable[FieldGroup]) -> int:
    return h.extend_schema(new_groups)
