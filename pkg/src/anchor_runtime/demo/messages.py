"""Payload schemas carried by the demo over generic envelopes.

Bodies are canonical JSON so that replay can compare them byte for byte.
"""
import typing as t

import dataclasses
import json

from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.utils import StrEnum
from anchor_runtime.utils.options import asdict
from anchor_runtime.utils.options import canonical_json
from anchor_runtime.utils.options import fromdict

T = t.TypeVar("T")

# Wall-clock fields, left out of replay comparisons.
TIMESTAMP_FIELDS = frozenset({"issued_at", "reported_at"})


class CommandAction(StrEnum):
    INCREASE = "increase"
    DECREASE = "decrease"
    HOLD = "hold"


class EventStatus(StrEnum):
    STARTED = "started"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclasses.dataclass(frozen=True)
class CommandMsg:
    project_id: str
    cycle: int
    action: CommandAction
    magnitude: float
    #: Policy input the command was computed from.
    observed: float
    issued_at: int = 0
    #: Issued from a snapshot without any aggregate.
    stale: bool = False


@dataclasses.dataclass(frozen=True)
class EventMsg:
    project_id: str
    ref_command: int
    cycle: int
    status: EventStatus
    measured: float
    reason: t.Optional[str] = None
    reported_at: int = 0

    @property
    def is_final(self) -> bool:
        return self.status is not EventStatus.STARTED


@dataclasses.dataclass(frozen=True)
class RecordsUpdated:
    cycle: int
    version_counter: int


@dataclasses.dataclass(frozen=True)
class FeedbackApplied:
    project_id: str
    cycle: int
    status: EventStatus


@dataclasses.dataclass(frozen=True)
class ReadyCheck:
    requester: str


@dataclasses.dataclass(frozen=True)
class RoleReady:
    role: str
    node_id: str


def encode(message: t.Any) -> bytes:
    return canonical_json(message)


def decode(body: bytes, klass: t.Type[T]) -> T:
    try:
        return fromdict(json.loads(body), klass)
    except ValueError as e:
        raise ProtocolError(f"Invalid {klass.__name__} body: {e}") from e


def comparable(message: t.Any) -> bytes:
    """Canonical body without its timestamps.

    >>> comparable(CommandMsg("alpha", 1, CommandAction.HOLD, 0.0, 0.5, issued_at=9))
    b'{"action":"hold","cycle":1,"magnitude":0.0,"observed":0.5,"project_id":"alpha","stale":false}'
    """
    body = asdict(message)
    return canonical_json({k: v for k, v in body.items() if k not in TIMESTAMP_FIELDS})
