"""Record region layout shared by the demo roles."""
import typing as t

import os

from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.records import ElementType
from anchor_runtime.records import FieldGroup
from anchor_runtime.records import RecordSchema
from anchor_runtime.records import RegionHandle
from anchor_runtime.records import Role
from anchor_runtime.records import create_region
from anchor_runtime.records.schema import MAX_NAME_LEN

AGG_MEAN = "agg_mean"
AGG_MIN = "agg_min"
AGG_MAX = "agg_max"
AGG_COUNT = "agg_count"
AGG_CYCLE = "agg_cycle"

AGGREGATE_GROUPS = (AGG_MEAN, AGG_MIN, AGG_MAX, AGG_COUNT, AGG_CYCLE)

FEEDBACK_PREFIX = "fb_"
FEEDBACK_REF_PREFIX = "fbref_"


def feedback_group(project_id: str) -> str:
    return FEEDBACK_PREFIX + project_id


def feedback_ref_group(project_id: str) -> str:
    """Group holding (command seq, cycle) of the materialized event."""
    return FEEDBACK_REF_PREFIX + project_id


def demo_schema(features: int, projects: t.Iterable[str]) -> RecordSchema:
    groups = [
        FieldGroup(AGG_MEAN, ElementType.F64, features, Role.INGESTION),
        FieldGroup(AGG_MIN, ElementType.F64, features, Role.INGESTION),
        FieldGroup(AGG_MAX, ElementType.F64, features, Role.INGESTION),
        FieldGroup(AGG_COUNT, ElementType.I64, 1, Role.INGESTION),
        FieldGroup(AGG_CYCLE, ElementType.I64, 1, Role.INGESTION),
    ]
    for project_id in projects:
        if len(feedback_ref_group(project_id)) > MAX_NAME_LEN:
            raise ConfigError(f"Project name too long: {project_id!r}")
        groups.append(
            FieldGroup(feedback_group(project_id), ElementType.F64, 1, Role.FEEDBACK)
        )
        groups.append(
            FieldGroup(
                feedback_ref_group(project_id), ElementType.I64, 2, Role.FEEDBACK
            )
        )
    return RecordSchema(tuple(groups))


def prepare_region(options: DemoConfig, path: str) -> None:
    """Create a fresh region for a demo run, replacing any previous one."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    schema = demo_schema(options.features, options.projects)
    create_region(path, schema, overwrite=True).close()


def ensure_region(options: DemoConfig, path: str) -> None:
    if not os.path.exists(path):
        prepare_region(options, path)


def feedback_value(
    region: RegionHandle, project_id: str, default: float
) -> tuple[float, bool]:
    """Materialized feedback of `project_id`, and whether it was ever written."""
    name = feedback_group(project_id)
    snapshot = region.read_snapshot([name])
    if snapshot.counters[name] == 0:
        return default, False
    return float(snapshot[name][0]), True
