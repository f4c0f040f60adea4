from .log import LogKind
from .log import ReplayLog
from .log import ReplayLogEntry
from .log import append_log
from .log import replay_log
from .region import RegionHandle
from .region import Snapshot
from .region import create_region
from .region import extend_schema
from .region import open_region
from .region import read_snapshot
from .region import write_group
from .region import write_groups
from .schema import ElementType
from .schema import FieldGroup
from .schema import RecordSchema
from .schema import Role

__all__ = (
    "ElementType",
    "FieldGroup",
    "LogKind",
    "RecordSchema",
    "RegionHandle",
    "ReplayLog",
    "ReplayLogEntry",
    "Role",
    "Snapshot",
    "append_log",
    "create_region",
    "extend_schema",
    "open_region",
    "read_snapshot",
    "replay_log",
    "write_group",
    "write_groups",
)
