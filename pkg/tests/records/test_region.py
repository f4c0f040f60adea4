import typing as t

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from anchor_runtime.core.errors import ArityMismatch
from anchor_runtime.core.errors import ContendedTimeout
from anchor_runtime.core.errors import IoFailure
from anchor_runtime.core.errors import NameCollision
from anchor_runtime.core.errors import RegionBadMagic
from anchor_runtime.core.errors import RoleViolation
from anchor_runtime.core.errors import SchemaInvalid
from anchor_runtime.core.errors import UnknownGroup
from anchor_runtime.records import ElementType
from anchor_runtime.records import FieldGroup
from anchor_runtime.records import RecordSchema
from anchor_runtime.records import Role
from anchor_runtime.records import create_region
from anchor_runtime.records import extend_schema
from anchor_runtime.records import open_region
from anchor_runtime.records import read_snapshot
from anchor_runtime.records import write_group
from anchor_runtime.records import write_groups
from anchor_runtime.records.schema import BODY_OFFSET
from anchor_runtime.records.schema import group_offsets

SCHEMA = RecordSchema(
    (
        FieldGroup("agg", ElementType.F64, 3, Role.INGESTION),
        FieldGroup("count", ElementType.I64, 1, Role.INGESTION),
        FieldGroup("names", ElementType.BYTES, 2, Role.FEEDBACK, width=5),
        FieldGroup("fb", ElementType.F64, 1, Role.FEEDBACK),
    )
)


@pytest.fixture
def region_path(tmp_path: t.Any) -> str:
    path = os.path.join(tmp_path, "region.ancr")
    create_region(path, SCHEMA).close()
    return path


def test_fresh_region_reads_zeros(region_path: str) -> None:
    with open_region(region_path) as region:
        snapshot = read_snapshot(region)
        assert snapshot.schema_version == 1
        assert snapshot.version_counter == 0
        assert snapshot.as_lists() == {
            "agg": [0.0, 0.0, 0.0],
            "count": [0],
            "names": [b"", b""],
            "fb": [0.0],
        }
        assert snapshot.counters == {"agg": 0, "count": 0, "names": 0, "fb": 0}


def test_write_and_read(region_path: str) -> None:
    with open_region(region_path, role=Role.INGESTION) as writer, open_region(
        region_path
    ) as reader:
        assert write_group(writer, "agg", [1.0, 2.0, 3.5]) == 2
        assert write_groups(writer, {"agg": np.ones(3), "count": [7]}) == 6

        snapshot = reader.read_snapshot(["agg", "count"])
        assert snapshot["agg"].tolist() == [1.0, 1.0, 1.0]
        assert snapshot["count"].tolist() == [7]
        assert snapshot.counters == {"agg": 4, "count": 2}
        assert snapshot.version_counter == 6
        assert reader.version_counter == 6
        assert reader.counter("fb") == 0


def test_bytes_group(region_path: str) -> None:
    with open_region(region_path, role=Role.FEEDBACK) as writer:
        writer.write_group("names", [b"ab", b"abcde"])
        assert writer.read_snapshot(["names"])["names"].tolist() == [b"ab", b"abcde"]
        with pytest.raises(ArityMismatch):
            writer.write_group("names", [b"abcdef", b""])


def test_write_errors(region_path: str) -> None:
    with open_region(region_path, role=Role.INGESTION) as writer:
        with pytest.raises(RoleViolation):
            writer.write_group("fb", [1.0])
        with pytest.raises(ArityMismatch):
            writer.write_group("agg", [1.0, 2.0])
        with pytest.raises(ArityMismatch):
            writer.write_group("agg", ["a", "b", "c"])
        with pytest.raises(UnknownGroup):
            writer.write_group("missing", [1])
        # Failed writes leave nothing behind.
        assert writer.version_counter == 0

    with open_region(region_path) as reader:
        with pytest.raises(RoleViolation):
            reader.write_group("agg", [1.0, 2.0, 3.0])
        with pytest.raises(UnknownGroup):
            reader.read_snapshot(["missing"])


def test_open_errors(tmp_path: t.Any, region_path: str) -> None:
    with pytest.raises(IoFailure):
        open_region(os.path.join(tmp_path, "missing.ancr"))

    with pytest.raises(IoFailure):
        create_region(region_path, SCHEMA)

    bad = os.path.join(tmp_path, "bad.ancr")
    with open(bad, "wb") as f:
        f.write(b"XXXX" + bytes(BODY_OFFSET))
    with pytest.raises(RegionBadMagic):
        open_region(bad)

    # Body cut short of the declared length.
    truncated = os.path.join(tmp_path, "truncated.ancr")
    with open(region_path, "rb") as f:
        data = f.read()
    with open(truncated, "wb") as f:
        f.write(data[:-8])
    with pytest.raises(IoFailure):
        open_region(truncated)


@pytest.mark.parametrize(
    "groups",
    [
        (),
        (FieldGroup("a", "i64", 1, "ingestion"), FieldGroup("a", "f64", 1, "feedback")),
        (FieldGroup("bad name", "i64", 1, "ingestion"),),
        (FieldGroup("x" * 33, "i64", 1, "ingestion"),),
        (FieldGroup("a", "i64", 0, "ingestion"),),
        (FieldGroup("a", "bytes", 1, "ingestion", width=0),),
    ],
)
def test_schema_invalid(tmp_path: t.Any, groups: tuple) -> None:
    with pytest.raises(SchemaInvalid):
        create_region(os.path.join(tmp_path, "r.ancr"), RecordSchema(groups))


def test_schema_invalid_types() -> None:
    with pytest.raises(SchemaInvalid):
        FieldGroup("a", "u32", 1, "ingestion")
    with pytest.raises(SchemaInvalid):
        FieldGroup("a", "i64", 1, "reader")


def test_group_offsets() -> None:
    offsets = group_offsets(SCHEMA.field_groups)
    # Groups are packed in declaration order, each 8-byte aligned.
    assert offsets == {
        "agg": BODY_OFFSET,
        "count": BODY_OFFSET + 24,
        "names": BODY_OFFSET + 32,
        "fb": BODY_OFFSET + 48,
    }
    assert all(offset % 8 == 0 for offset in offsets.values())


def test_file_layout(region_path: str) -> None:
    with open(region_path, "rb") as f:
        data = f.read()
    assert data[:4] == b"ANCR"
    assert len(data) == BODY_OFFSET + 56

    with open_region(region_path, role=Role.INGESTION) as writer:
        writer.write_group("count", [0x0102])
    with open(region_path, "rb") as f:
        data = f.read()
    assert data[BODY_OFFSET + 24 : BODY_OFFSET + 32] == (0x0102).to_bytes(8, "little")


def test_extend_schema(region_path: str) -> None:
    new_groups = [FieldGroup("extra", ElementType.I64, 2, Role.FEEDBACK)]
    with open_region(region_path, role=Role.INGESTION) as writer:
        writer.write_group("agg", [1.0, 2.0, 3.0])

    with open_region(region_path) as reader:
        with open_region(region_path, maintenance=True) as maintainer:
            with pytest.raises(IoFailure):
                # Readers do not hold the writer lock, but a second writable
                # handle does.
                with open_region(region_path, role=Role.FEEDBACK):
                    maintainer.extend_schema(new_groups)
            assert extend_schema(maintainer, new_groups) == 2
            with pytest.raises(NameCollision):
                maintainer.extend_schema(new_groups)

        # Existing readers pick the new group up on first use.
        snapshot = reader.read_snapshot(["agg", "extra"])
        assert snapshot.schema_version == 2
        assert snapshot["agg"].tolist() == [1.0, 2.0, 3.0]
        assert snapshot["extra"].tolist() == [0, 0]

    with open_region(region_path, role=Role.FEEDBACK) as writer:
        writer.write_group("extra", [4, 5])
        offsets = group_offsets(writer.schema.field_groups)
        assert offsets["extra"] == BODY_OFFSET + 56


def test_contended_timeout(region_path: str) -> None:
    with open_region(region_path, role=Role.INGESTION) as writer, open_region(
        region_path, max_retries=5
    ) as reader:
        with writer.write_section(["count"]):
            assert writer.counter("count") % 2 == 1
            with pytest.raises(ContendedTimeout):
                reader.read_snapshot(["count"])
            # Groups outside the section stay readable.
            assert reader.read_snapshot(["agg"]).version_counter == 0
        assert reader.read_snapshot(["count"]).counters["count"] == 2


STRESS_SCHEMA = RecordSchema(
    (
        FieldGroup("data", ElementType.I64, 64, Role.INGESTION),
        FieldGroup("meta", ElementType.I64, 2, Role.INGESTION),
    )
)
STRESS_READS = 3000
STRESS_WRITES = 100_000
STRESS_RETRIES = 10_000


def stress_writer(path: str, started: t.Any) -> None:
    with open_region(path, role=Role.INGESTION) as region:
        for k in range(1, STRESS_WRITES + 1):
            region.write_groups({"data": [k] * 63 + [63 * k], "meta": [k, -k]})
            if k == 1:
                started.set()


def stress_reader(path: str) -> tuple[int, int, int]:
    """Returns (torn snapshots, distinct versions seen, timed out reads)."""
    torn = 0
    timeouts = 0
    versions = set()
    with open_region(path, max_retries=STRESS_RETRIES) as region:
        for _ in range(STRESS_READS):
            try:
                snapshot = region.read_snapshot()
            except ContendedTimeout:
                timeouts += 1
                continue
            data = snapshot["data"]
            k = int(data[0])
            if (
                not (data[:63] == k).all()
                or int(data[63]) != 63 * k
                or snapshot["meta"].tolist() != [k, -k]
            ):
                torn += 1
            versions.add(snapshot.version_counter)
    return torn, len(versions), timeouts


@pytest.mark.slow
def test_concurrent_readers_see_consistent_snapshots(tmp_path: t.Any) -> None:
    path = os.path.join(tmp_path, "stress.ancr")
    create_region(path, STRESS_SCHEMA).close()

    context = multiprocessing.get_context("spawn")
    started = context.Event()
    writer = context.Process(target=stress_writer, args=(path, started))
    writer.start()
    try:
        assert started.wait(30)
        with ProcessPoolExecutor(max_workers=8, mp_context=context) as pool:
            results = list(pool.map(stress_reader, [path] * 8))
    finally:
        writer.join(120)
    assert writer.exitcode == 0

    assert [torn for torn, _, _ in results] == [0] * 8
    assert [timeouts for _, _, timeouts in results] == [0] * 8
    assert sum(versions for _, versions, _ in results) > 8

    with open_region(path) as region:
        snapshot = region.read_snapshot()
        # Every write bumps each group counter by 2.
        assert snapshot.counters["data"] == snapshot.counters["meta"]
        assert snapshot.counters["data"] == 2 * int(snapshot["meta"][0])
        assert int(snapshot["meta"][0]) == STRESS_WRITES
        assert snapshot.counters["meta"] == 2 * STRESS_WRITES
