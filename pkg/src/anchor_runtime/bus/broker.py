"""Broker core: sessions, routing, per-priority queues and batching.

This module performs no I/O. The server feeds it decoded frames and drives
`flush_batches` and `check_liveness` periodically; outbound frames are
handed to each session's `Sender`.
"""
import typing as t

import dataclasses
import time

from anchor_runtime.config_definitions import BrokerConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core import Subscription
from anchor_runtime.core.errors import MalformedTopic
from anchor_runtime.core.errors import SendBackpressure
from anchor_runtime.core.errors import VersionMismatch
from anchor_runtime.core.topic import is_token
from anchor_runtime.utils.log import getLogger
from anchor_runtime.utils.options import canonical_json
from anchor_runtime.wire import DATA_FRAMES
from anchor_runtime.wire import PROTOCOL_VERSION
from anchor_runtime.wire import AckFrame
from anchor_runtime.wire import AckStatus
from anchor_runtime.wire import BatchFrame
from anchor_runtime.wire import DataFrame
from anchor_runtime.wire import Frame
from anchor_runtime.wire import HeartbeatFrame
from anchor_runtime.wire import InvalidSubscribeFrame
from anchor_runtime.wire import RegisterFrame
from anchor_runtime.wire import StatsReplyFrame
from anchor_runtime.wire import StatsRequestFrame
from anchor_runtime.wire import SubscribeFrame
from anchor_runtime.wire import UnsubscribeFrame
from anchor_runtime.wire import envelope_wire_size
from anchor_runtime.wire import envelopes_of
from anchor_runtime.wire.codec import HEADER_SIZE

from .hooks import BatchFlushed
from .hooks import BrokerHooks
from .hooks import CloseReason
from .hooks import DropReason
from .hooks import MessageDropped
from .hooks import SessionClosed
from .hooks import SubscriptionRejected
from .queues import PriorityQueues
from .queues import QueuedEnvelope
from .routing import RoutingTable

BROKER_ID = "broker"


class Sender(t.Protocol):
    """Outbound side of a session.

    `can_send` is checked before each batch is built. `send` raises
    `SendBackpressure` when it still cannot take a data frame.
    """

    def can_send(self) -> bool:
        ...

    def send(self, frame: Frame) -> None:
        ...

    def close(self) -> None:
        ...


@dataclasses.dataclass
class SessionStats:
    published: int = 0
    delivered: int = 0
    dropped: int = 0
    batches: int = 0
    backpressure: int = 0


@dataclasses.dataclass(eq=False)
class NodeSession:
    node_id: str
    sender: Sender
    queues: PriorityQueues
    heartbeat_deadline: float
    registered_at: float
    stats: SessionStats = dataclasses.field(default_factory=SessionStats)
    closed: bool = False


@dataclasses.dataclass(frozen=True)
class Enqueued:
    #: Oldest envelope of the same priority evicted to make room.
    evicted: t.Optional[MessageEnvelope] = None


@dataclasses.dataclass(frozen=True)
class Dropped:
    reason: DropReason
    envelope: MessageEnvelope


EnqueueResult = t.Union[Enqueued, Dropped]


@dataclasses.dataclass
class BrokerStats:
    registered: int = 0
    evicted: int = 0
    expired: int = 0
    routed: int = 0
    unroutable: int = 0
    delivered: int = 0
    dropped: int = 0
    batches: int = 0
    rejected_subscriptions: int = 0


class Broker:
    def __init__(
        self,
        options: BrokerConfig,
        *,
        hooks: t.Optional[BrokerHooks] = None,
        clock: t.Callable[[], float] = time.monotonic,
        broker_id: str = BROKER_ID,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.hooks = hooks or BrokerHooks()
        self.clock = clock
        self.broker_id = broker_id
        self.sessions: dict[str, NodeSession] = {}
        self.routing = RoutingTable()
        self.stats = BrokerStats()
        self.max_residence = options.max_residence_ms / 1000
        self.heartbeat_timeout = options.heartbeat_timeout_ms / 1000
        self._queued = 0

    @property
    def has_pending(self) -> bool:
        return self._queued > 0

    def register_node(
        self,
        identity: str,
        protocol_version: int,
        sender: Sender,
        now: t.Optional[float] = None,
    ) -> NodeSession:
        if protocol_version != PROTOCOL_VERSION:
            raise VersionMismatch(
                f"Unsupported protocol version {protocol_version}, "
                f"expected {PROTOCOL_VERSION}"
            )
        if not is_token(identity):
            raise MalformedTopic(f"Invalid node identity: {identity!r}")

        now = self.clock() if now is None else now
        previous = self.sessions.get(identity)
        if previous is not None:
            self.stats.evicted += 1
            self.close_session(previous, CloseReason.EVICTED)

        session = NodeSession(
            node_id=identity,
            sender=sender,
            queues=PriorityQueues(self.options.queue_capacity),
            heartbeat_deadline=now + self.heartbeat_timeout,
            registered_at=now,
        )
        self.sessions[identity] = session
        self.stats.registered += 1
        if self.hooks.session_registered:
            self.hooks.session_registered.emit(session)
        return session

    def close_session(self, session: NodeSession, reason: CloseReason) -> None:
        if session.closed:
            return
        session.closed = True
        if self.sessions.get(session.node_id) is session:
            del self.sessions[session.node_id]
            self.routing.remove_node(session.node_id)

        discarded = session.queues.clear()
        self._queued -= len(discarded)
        session.stats.dropped += len(discarded)
        self.stats.dropped += len(discarded)
        session.sender.close()
        if self.hooks.session_closed:
            self.hooks.session_closed.emit(
                SessionClosed(session=session, reason=reason, discarded=len(discarded))
            )

    def touch(self, session: NodeSession, now: t.Optional[float] = None) -> None:
        now = self.clock() if now is None else now
        session.heartbeat_deadline = now + self.heartbeat_timeout

    def handle_subscribe(self, session: NodeSession, subscription: Subscription) -> int:
        self.routing.add(session.node_id, subscription)
        return subscription.subscription_id

    def reject_subscribe(
        self, session: NodeSession, frame: InvalidSubscribeFrame
    ) -> AckFrame:
        """Refuse a subscription whose patterns failed validation.

        The session stays registered and its other subscriptions unchanged.
        """
        self.stats.rejected_subscriptions += 1
        if self.hooks.subscription_rejected:
            self.hooks.subscription_rejected.emit(
                SubscriptionRejected(
                    session.node_id, frame.subscription_id, frame.channel, frame.region
                )
            )
        return AckFrame(frame.subscription_id, AckStatus.PATTERN_INVALID)

    def handle_unsubscribe(self, session: NodeSession, subscription_id: int) -> bool:
        return self.routing.remove(session.node_id, subscription_id)

    def route(
        self, envelope: MessageEnvelope, *, sender_id: t.Optional[str] = None
    ) -> list[str]:
        """Destinations of `envelope`.

        The sending node, the publisher by default, is excluded unless it
        subscribed with `allow_self`.
        """
        exclude = envelope.publisher_id if sender_id is None else sender_id
        return self.routing.match(envelope.topic, exclude=exclude)

    def enqueue(
        self,
        session: NodeSession,
        envelope: MessageEnvelope,
        now: t.Optional[float] = None,
        *,
        size: t.Optional[int] = None,
    ) -> EnqueueResult:
        if session.closed:
            return Dropped(DropReason.SESSION_CLOSED, envelope)
        now = self.clock() if now is None else now
        item = QueuedEnvelope(
            envelope=envelope,
            size=envelope_wire_size(envelope) if size is None else size,
            enqueued_at=now,
        )
        evicted = session.queues.push(item)
        if evicted is None:
            self._queued += 1
            return Enqueued()

        session.stats.dropped += 1
        self.stats.dropped += 1
        if self.hooks.message_dropped:
            self.hooks.message_dropped.emit(
                MessageDropped(session.node_id, evicted.envelope, DropReason.QUEUE_FULL)
            )
        return Enqueued(evicted=evicted.envelope)

    def publish(
        self,
        session: t.Optional[NodeSession],
        envelope: MessageEnvelope,
        now: t.Optional[float] = None,
    ) -> list[str]:
        now = self.clock() if now is None else now
        destinations = self.route(
            envelope, sender_id=session.node_id if session else None
        )
        if session is not None:
            session.stats.published += 1
        if not destinations:
            self.stats.unroutable += 1
            if self.hooks.message_unroutable:
                self.hooks.message_unroutable.emit(envelope)
            return destinations

        self.stats.routed += 1
        size = envelope_wire_size(envelope)
        for node_id in destinations:
            self.enqueue(self.sessions[node_id], envelope, now, size=size)
        return destinations

    def _should_flush(self, session: NodeSession, now: float) -> bool:
        queues = session.queues
        if queues.nbytes >= self.options.batch_bytes_threshold:
            return True
        oldest = queues.oldest_enqueued_at()
        return oldest is not None and now - oldest >= self.max_residence

    def flush_session(self, session: NodeSession, now: float) -> int:
        sent = 0
        threshold = self.options.batch_bytes_threshold
        queues = session.queues
        while queues and self._should_flush(session, now):
            if not session.sender.can_send():
                session.stats.backpressure += 1
                break

            items = []
            nbytes = 0
            # Header and envelope count of a Batch frame.
            frame_size = HEADER_SIZE + 4
            while queues and nbytes < threshold:
                head = queues.peek()
                assert head is not None
                # Each Batch item carries a 4-byte length prefix.
                if items and frame_size + 4 + head.size > self.options.max_frame:
                    break
                item = queues.pop()
                frame_size += 4 + item.size
                items.append(item)
                nbytes += item.size
            batch = [item.envelope for item in items]

            frame: Frame
            if len(batch) == 1:
                frame = DataFrame(batch[0])
            else:
                frame = BatchFrame(tuple(batch))
            try:
                session.sender.send(frame)
            except SendBackpressure:
                queues.requeue(items)
                session.stats.backpressure += 1
                break
            self._queued -= len(batch)

            sent += 1
            session.stats.batches += 1
            session.stats.delivered += len(batch)
            self.stats.batches += 1
            self.stats.delivered += len(batch)
            if self.hooks.batch_flushed:
                self.hooks.batch_flushed.emit(
                    BatchFlushed(session.node_id, len(batch), nbytes)
                )
        return sent

    def flush_batches(self, now: t.Optional[float] = None) -> int:
        """Send every session buffer that reached the size or age trigger.

        Returns the number of frames handed to senders.
        """
        now = self.clock() if now is None else now
        sent = 0
        for session in list(self.sessions.values()):
            if session.queues:
                sent += self.flush_session(session, now)
        return sent

    def check_liveness(self, now: t.Optional[float] = None) -> list[str]:
        now = self.clock() if now is None else now
        expired = [
            session
            for session in self.sessions.values()
            if session.heartbeat_deadline < now
        ]
        for session in expired:
            self.stats.expired += 1
            self.close_session(session, CloseReason.EXPIRED)
        return [session.node_id for session in expired]

    def handle_frame(
        self, session: NodeSession, frame: Frame, now: t.Optional[float] = None
    ) -> list[Frame]:
        """Apply a frame received from `session`. Returns the replies."""
        if session.closed:
            return []
        now = self.clock() if now is None else now
        self.touch(session, now)

        if isinstance(frame, DATA_FRAMES):
            for envelope in envelopes_of(frame):
                self.publish(session, envelope, now)
            return []
        if isinstance(frame, SubscribeFrame):
            return [AckFrame(self.handle_subscribe(session, frame.subscription))]
        if isinstance(frame, InvalidSubscribeFrame):
            return [self.reject_subscribe(session, frame)]
        if isinstance(frame, UnsubscribeFrame):
            self.handle_unsubscribe(session, frame.subscription_id)
            return [AckFrame(frame.subscription_id)]
        if isinstance(frame, HeartbeatFrame):
            return [HeartbeatFrame(self.broker_id, frame.ts)]
        if isinstance(frame, StatsRequestFrame):
            return [StatsReplyFrame(canonical_json(self.stats_dump()))]
        if isinstance(frame, RegisterFrame):
            return [AckFrame(0, AckStatus.ERROR)]
        return []

    def stats_dump(self) -> dict[str, t.Any]:
        return {
            "broker_id": self.broker_id,
            "sessions": len(self.sessions),
            "subscriptions": len(self.routing),
            "queued": self._queued,
            **dataclasses.asdict(self.stats),
            "nodes": [self.session_stats(s) for s in self.sessions.values()],
        }

    def session_stats(self, session: NodeSession) -> dict[str, t.Any]:
        return {
            "node_id": session.node_id,
            **dataclasses.asdict(session.stats),
            "queued": len(session.queues),
            "queue_lengths": session.queues.lengths(),
            "subscriptions": [
                dataclasses.asdict(subscription)
                for subscription in self.routing.subscriptions_of(session.node_id)
            ],
        }

    def audit(self) -> list[str]:
        problems = self.routing.audit()
        for node_id in self.routing.nodes:
            if node_id not in self.sessions:
                problems.append(f"Subscriptions held for unknown node {node_id!r}")
        queued = sum(len(s.queues) for s in self.sessions.values())
        if queued != self._queued:
            problems.append(f"Queued counter {self._queued} != {queued}")
        return problems

    def close(self) -> None:
        for session in list(self.sessions.values()):
            self.close_session(session, CloseReason.SHUTDOWN)
