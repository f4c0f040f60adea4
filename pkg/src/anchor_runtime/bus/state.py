import typing as t

import os
import time

from anchor_runtime.records import ElementType
from anchor_runtime.records import FieldGroup
from anchor_runtime.records import RecordSchema
from anchor_runtime.records import RegionHandle
from anchor_runtime.records import Role
from anchor_runtime.records import create_region
from anchor_runtime.utils.log import getLogger

if t.TYPE_CHECKING:
    from .broker import Broker

COUNTERS = (
    "sessions",
    "subscriptions",
    "queued",
    "routed",
    "unroutable",
    "delivered",
    "dropped",
    "batches",
    "expired",
    "evicted",
)

STATE_SCHEMA = RecordSchema(
    (
        FieldGroup("broker_counters", ElementType.I64, len(COUNTERS), Role.INGESTION),
        # pid, started_at (wall clock ns)
        FieldGroup("broker_meta", ElementType.I64, 2, Role.INGESTION),
    )
)


class BrokerState:
    """Broker counters mirrored in a records region.

    The region is recreated from zero on every start.
    """

    def __init__(self, region: RegionHandle) -> None:
        self.logger = getLogger(__name__, self)
        self.region = region

    @classmethod
    def create(cls, path: str) -> "BrokerState":
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        region = create_region(path, STATE_SCHEMA, role=Role.INGESTION, overwrite=True)
        region.write_group("broker_meta", [os.getpid(), time.time_ns()])
        return cls(region)

    def write(self, broker: "Broker") -> None:
        stats = broker.stats
        self.region.write_group(
            "broker_counters",
            [
                len(broker.sessions),
                len(broker.routing),
                sum(len(s.queues) for s in broker.sessions.values()),
                stats.routed,
                stats.unroutable,
                stats.delivered,
                stats.dropped,
                stats.batches,
                stats.expired,
                stats.evicted,
            ],
        )

    def close(self) -> None:
        self.region.close()


def read_state(region: RegionHandle) -> dict[str, int]:
    snapshot = region.read_snapshot(["broker_counters"])
    return dict(zip(COUNTERS, snapshot["broker_counters"].tolist()))
