import typing as t

import dataclasses

from anchor_runtime.core import MessageEnvelope
from anchor_runtime.utils import StrEnum
from anchor_runtime.utils.hooks import EventHook

if t.TYPE_CHECKING:
    from .broker import NodeSession


class DropReason(StrEnum):
    QUEUE_FULL = "queue_full"
    SESSION_CLOSED = "session_closed"
    EXPIRED = "expired"
    EVICTED = "evicted"


class CloseReason(StrEnum):
    DISCONNECTED = "disconnected"
    EXPIRED = "expired"
    EVICTED = "evicted"
    PROTOCOL_ERROR = "protocol_error"
    SHUTDOWN = "shutdown"


class MessageDropped(t.NamedTuple):
    node_id: str
    envelope: MessageEnvelope
    reason: DropReason


class SessionClosed(t.NamedTuple):
    session: "NodeSession"
    reason: CloseReason
    discarded: int


class SubscriptionRejected(t.NamedTuple):
    node_id: str
    subscription_id: int
    channel: str
    region: str


class BatchFlushed(t.NamedTuple):
    node_id: str
    count: int
    nbytes: int


def hookfield() -> t.Any:
    return dataclasses.field(default_factory=EventHook)


@dataclasses.dataclass
class BrokerHooks:
    session_registered: EventHook["NodeSession"] = hookfield()
    session_closed: EventHook[SessionClosed] = hookfield()
    message_dropped: EventHook[MessageDropped] = hookfield()
    message_unroutable: EventHook[MessageEnvelope] = hookfield()
    batch_flushed: EventHook[BatchFlushed] = hookfield()
    subscription_rejected: EventHook[SubscriptionRejected] = hookfield()
