import typing as t

import asyncio
import contextlib
import dataclasses
import itertools
import json
import random
import time
from collections import deque
from collections.abc import Awaitable

from anchor_runtime.config_definitions import ClientConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core import Subscription
from anchor_runtime.core import TopicAddress
from anchor_runtime.core import parse_topic
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.errors import PayloadTooLarge
from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.core.errors import TargetDown
from anchor_runtime.core.subscription import WILDCARD
from anchor_runtime.utils.asyncutils import TasksGroup
from anchor_runtime.utils.asyncutils import cancel_task
from anchor_runtime.utils.hooks import EventHook
from anchor_runtime.utils.log import getLogger
from anchor_runtime.wire import AckFrame
from anchor_runtime.wire import AckStatus
from anchor_runtime.wire import BatchFrame
from anchor_runtime.wire import DataFrame
from anchor_runtime.wire import Frame
from anchor_runtime.wire import FrameCodec
from anchor_runtime.wire import FrameDecoder
from anchor_runtime.wire import HeartbeatFrame
from anchor_runtime.wire import RegisterFrame
from anchor_runtime.wire import StatsReplyFrame
from anchor_runtime.wire import StatsRequestFrame
from anchor_runtime.wire import SubscribeFrame
from anchor_runtime.wire import UnsubscribeFrame
from anchor_runtime.wire import envelope_wire_size
from anchor_runtime.wire import envelopes_of
from anchor_runtime.wire import max_frame_for
from anchor_runtime.wire.codec import HEADER_SIZE

from ..bus.transport import Connection
from ..bus.transport import open_connection
from .backoff import Backoff
from .recovery import Action
from .recovery import ClientState
from .recovery import RecoveryEvent
from .recovery import RecoveryMachine
from .recovery import Transition

Handler = t.Callable[[MessageEnvelope], t.Union[None, Awaitable[None]]]

# Bytes of envelopes coalesced in one outbound frame.
BATCH_BYTES = 64 * 1024


@dataclasses.dataclass(frozen=True)
class Accepted:
    seq: int
    #: Oldest queued envelope dropped to make room.
    evicted: t.Optional[MessageEnvelope] = None


@dataclasses.dataclass(frozen=True)
class DroppedLocal:
    reason: str


PublishResult = t.Union[Accepted, DroppedLocal]


@dataclasses.dataclass
class ClientStats:
    published: int = 0
    sent: int = 0
    dropped_local: int = 0
    received: int = 0
    dispatched: int = 0
    handler_errors: int = 0
    connections: int = 0
    registrations: int = 0


@dataclasses.dataclass
class ClientHooks:
    state_changed: EventHook[Transition] = dataclasses.field(
        default_factory=EventHook
    )
    message_dropped: EventHook[MessageEnvelope] = dataclasses.field(
        default_factory=EventHook
    )


class BusClient:
    """A bus node: publishes, subscribes and keeps itself registered.

    `publish`, `subscribe` and `unsubscribe` never wait on the network. All
    handlers run one at a time on the client's dispatch task.
    """

    def __init__(
        self,
        options: ClientConfig,
        *,
        node_id: t.Optional[str] = None,
        endpoint: t.Optional[str] = None,
        hooks: t.Optional[ClientHooks] = None,
        rng: t.Optional[random.Random] = None,
    ) -> None:
        self.options = options
        self.node_id = node_id or options.node_id
        self.endpoint = endpoint or options.endpoint
        self.logger = getLogger(__name__, self)
        self.hooks = hooks or ClientHooks()
        self.codec = FrameCodec()
        if max_frame_for(options.max_payload) > self.codec.max_frame:
            raise ConfigError(
                f"max_payload of {options.max_payload} bytes does not fit "
                f"in a {self.codec.max_frame}-byte frame"
            )
        self.machine = RecoveryMachine()
        self.backoff = Backoff(
            base=options.backoff_base_ms / 1000,
            factor=options.backoff_factor,
            cap=options.backoff_cap_ms / 1000,
            jitter=options.backoff_jitter,
            rng=rng,
        )
        self.heartbeat_interval = options.heartbeat_interval_ms / 1000
        self.heartbeat_timeout = options.heartbeat_timeout_ms / 1000
        self.silence_timeout = 2 * self.heartbeat_timeout
        self.register_timeout = options.register_timeout_ms / 1000

        self.desired: dict[int, tuple[Subscription, Handler]] = {}
        self.send_queue: deque[MessageEnvelope] = deque()
        self.control_queue: deque[Frame] = deque()
        self.stats = ClientStats()
        self.last_rx = 0.0
        #: Time of the most recent connection attempt.
        self.last_attempt: t.Optional[float] = None

        self._seq = itertools.count(1)
        self._subscription_ids = itertools.count(1)
        self._dispatch_queue: asyncio.Queue[MessageEnvelope] = asyncio.Queue()
        self._send_ready = asyncio.Event()
        self._registered = asyncio.Event()
        self._fault: t.Optional[asyncio.Future[RecoveryEvent]] = None
        self._register_ack: t.Optional[asyncio.Future[AckStatus]] = None
        self._stats_replies: deque[asyncio.Future[dict]] = deque()
        self._heartbeat_sent: t.Optional[float] = None
        self._connection: t.Optional[Connection] = None
        self._connection_tasks = TasksGroup(name="client-connection")
        self._supervisor: t.Optional[asyncio.Task] = None
        self._dispatcher: t.Optional[asyncio.Task] = None
        self._closing = False

    # Public API.

    @property
    def state(self) -> ClientState:
        return self.machine.state

    @property
    def is_registered(self) -> bool:
        return self.machine.state is ClientState.REGISTERED

    def start(self) -> None:
        """Start the recovery machine. Connection failures are retried forever."""
        if self._supervisor is not None:
            return
        self._dispatcher = asyncio.create_task(
            self._dispatch_loop(), name=f"client-dispatch-{self.node_id}"
        )
        self._supervisor = asyncio.create_task(
            self._supervise(), name=f"client-recovery-{self.node_id}"
        )

    async def wait_registered(self, timeout: t.Optional[float] = None) -> None:
        await asyncio.wait_for(self._registered.wait(), timeout)

    async def close(self, *, drain_timeout: float = 0.0) -> None:
        if drain_timeout and self.is_registered:
            with contextlib.suppress(asyncio.TimeoutError):
                await asyncio.wait_for(self._drained(), drain_timeout)
        self._closing = True
        await cancel_task(self._supervisor)
        if self.state in (ClientState.CONNECTING, ClientState.REGISTERED):
            self._step(RecoveryEvent.CONN_ERROR)
        await self._cleanup()
        if self.state is ClientState.DRAINING:
            self._step(RecoveryEvent.CLEANUP_DONE)
        await cancel_task(self._dispatcher)
        self._registered.clear()
        for future in self._stats_replies:
            future.cancel()
        self._stats_replies.clear()

    async def __aenter__(self) -> "BusClient":
        self.start()
        return self

    async def __aexit__(self, *exc_info: t.Any) -> None:
        await self.close()

    def publish(
        self,
        topic: t.Union[str, TopicAddress],
        payload: bytes = b"",
    ) -> PublishResult:
        if isinstance(topic, str):
            topic = parse_topic(topic)
        if len(payload) > self.options.max_payload:
            raise PayloadTooLarge(
                f"Payload of {len(payload)} bytes exceeds {self.options.max_payload}"
            )
        if self._closing:
            return DroppedLocal("closed")
        envelope = MessageEnvelope(
            topic=topic,
            publisher_id=self.node_id,
            seq=next(self._seq),
            ts_monotonic_ns=time.monotonic_ns(),
            payload=bytes(payload),
        )
        return self._enqueue(envelope)

    def forward(self, envelope: MessageEnvelope) -> PublishResult:
        """Queue an envelope as is, keeping its publisher identity and seq."""
        if self._closing:
            return DroppedLocal("closed")
        return self._enqueue(envelope)

    def subscribe(
        self,
        channel: str,
        handler: Handler,
        *,
        region: str = WILDCARD,
        directed: bool = False,
        allow_self: bool = False,
    ) -> int:
        subscription = Subscription(
            subscription_id=next(self._subscription_ids),
            channel=channel,
            region=region,
            directed=directed,
            allow_self=allow_self,
        )
        self.desired[subscription.subscription_id] = (subscription, handler)
        if self._connection is not None:
            self._send_control(SubscribeFrame(subscription))
        return subscription.subscription_id

    def unsubscribe(self, subscription_id: int) -> None:
        if self.desired.pop(subscription_id, None) is None:
            return
        if self._connection is not None:
            self._send_control(UnsubscribeFrame(subscription_id))

    @property
    def desired_subscriptions(self) -> list[Subscription]:
        return [subscription for subscription, _ in self.desired.values()]

    async def request_stats(self, timeout: t.Optional[float] = None) -> dict:
        """Ask the broker for its stats dump."""
        future: asyncio.Future[dict] = asyncio.get_running_loop().create_future()
        self._stats_replies.append(future)
        self._send_control(StatsRequestFrame(self.node_id))
        return await asyncio.wait_for(future, timeout)

    # Send path.

    def _enqueue(self, envelope: MessageEnvelope) -> Accepted:
        evicted = None
        if len(self.send_queue) >= self.options.send_capacity:
            evicted = self.send_queue.popleft()
            self.stats.dropped_local += 1
            if self.hooks.message_dropped:
                self.hooks.message_dropped.emit(evicted)
        self.send_queue.append(envelope)
        self.stats.published += 1
        self._send_ready.set()
        return Accepted(seq=envelope.seq, evicted=evicted)

    def _send_control(self, frame: Frame) -> None:
        self.control_queue.append(frame)
        self._send_ready.set()

    async def _drained(self) -> None:
        while self.send_queue or self.control_queue:
            await asyncio.sleep(0.001)

    def _take_batch(self) -> list[MessageEnvelope]:
        """Pop envelopes for one frame within `BATCH_BYTES` and the frame limit."""
        batch = []
        nbytes = 0
        # Header and envelope count of a Batch frame.
        frame_size = HEADER_SIZE + 4
        while self.send_queue and nbytes < BATCH_BYTES:
            size = envelope_wire_size(self.send_queue[0])
            # Each Batch item carries a 4-byte length prefix.
            if batch and frame_size + 4 + size > self.codec.max_frame:
                break
            envelope = self.send_queue.popleft()
            if HEADER_SIZE + size > self.codec.max_frame:
                self.stats.dropped_local += 1
                self.logger.error(
                    "Dropping envelope larger than a frame",
                    extra={"data": {"size": size, "topic": str(envelope.topic)}},
                )
                continue
            batch.append(envelope)
            nbytes += size
            frame_size += 4 + size
        return batch

    async def _writer(self, connection: Connection) -> None:
        while True:
            if not self.control_queue and not self.send_queue:
                self._send_ready.clear()
                await self._send_ready.wait()

            chunks = []
            controls = []
            while self.control_queue:
                frame = self.control_queue.popleft()
                controls.append(frame)
                chunks.append(self.codec.encode(frame))
            batch = self._take_batch()
            if batch:
                data_frame: Frame
                if len(batch) == 1:
                    data_frame = DataFrame(batch[0])
                else:
                    data_frame = BatchFrame(tuple(batch))
                chunks.append(self.codec.encode(data_frame))

            try:
                await connection.write(b"".join(chunks))
            except TargetDown:
                # Unsent frames stay queued for the next connection.
                self.send_queue.extendleft(reversed(batch))
                while len(self.send_queue) > self.options.send_capacity:
                    self.send_queue.popleft()
                    self.stats.dropped_local += 1
                self._requeue_controls(controls)
                self._report(RecoveryEvent.CONN_ERROR)
                return
            self.stats.sent += len(batch)

    def _requeue_controls(self, controls: list[Frame]) -> None:
        # Subscriptions are replayed on registration, stats requests are not.
        for frame in controls:
            if isinstance(frame, StatsRequestFrame):
                self.control_queue.append(frame)

    # Receive path.

    async def _reader(self, connection: Connection) -> None:
        decoder = FrameDecoder(self.codec)
        loop = asyncio.get_running_loop()
        while True:
            data = await connection.read()
            if not data:
                self._report(RecoveryEvent.CONN_ERROR)
                return
            self.last_rx = loop.time()
            try:
                frames = decoder.feed(data)
            except ProtocolError as e:
                self.logger.warning(
                    "Protocol error from broker", extra={"data": {"error": repr(e)}}
                )
                self._report(RecoveryEvent.CONN_ERROR)
                return
            for frame in frames:
                self._on_frame(frame)

    def _on_frame(self, frame: Frame) -> None:
        if isinstance(frame, (DataFrame, BatchFrame)):
            for envelope in envelopes_of(frame):
                self.stats.received += 1
                self._dispatch_queue.put_nowait(envelope)
        elif isinstance(frame, HeartbeatFrame):
            self._heartbeat_sent = None
        elif isinstance(frame, AckFrame):
            if self._register_ack is not None and not self._register_ack.done():
                self._register_ack.set_result(frame.status)
            elif frame.status is not AckStatus.OK:
                self.logger.warning(
                    "Broker rejected a request",
                    extra={"data": {"ref": frame.ref_seq, "status": frame.status.name}},
                )
        elif isinstance(frame, StatsReplyFrame):
            while self._stats_replies:
                future = self._stats_replies.popleft()
                if not future.done():
                    future.set_result(json.loads(frame.body))
                    break

    async def _watchdog(self, connection: Connection) -> None:
        loop = asyncio.get_running_loop()
        while True:
            await asyncio.sleep(self.heartbeat_interval)
            now = loop.time()
            if now - self.last_rx > self.silence_timeout:
                self._report(RecoveryEvent.RX_SILENCE)
                return
            if (
                self._heartbeat_sent is not None
                and now - self._heartbeat_sent > self.heartbeat_timeout
            ):
                self._report(RecoveryEvent.HEARTBEAT_ACK_MISSING)
                return
            if self._heartbeat_sent is None:
                self._heartbeat_sent = now
            self._send_control(HeartbeatFrame(self.node_id, time.monotonic_ns()))

    async def _dispatch_loop(self) -> None:
        while True:
            envelope = await self._dispatch_queue.get()
            for subscription, handler in list(self.desired.values()):
                if not subscription.matches(envelope.topic, subscriber_id=self.node_id):
                    continue
                if (
                    envelope.publisher_id == self.node_id
                    and not subscription.allow_self
                ):
                    continue
                try:
                    result = handler(envelope)
                    if isinstance(result, Awaitable):
                        await result
                    self.stats.dispatched += 1
                except Exception:
                    self.stats.handler_errors += 1
                    self.logger.exception(
                        "Handler failed",
                        extra={"data": {"topic": str(envelope.topic)}},
                    )

    # Recovery machine.

    def _step(self, event: RecoveryEvent) -> Transition:
        transition = self.machine.step(event)
        if transition.changed:
            if transition.state is ClientState.REGISTERED:
                self._registered.set()
            else:
                self._registered.clear()
        if self.hooks.state_changed:
            self.hooks.state_changed.emit(transition)
        return transition

    def _report(self, event: RecoveryEvent) -> None:
        if self._fault is not None and not self._fault.done():
            self._fault.set_result(event)

    def _on_task_done(self, task: asyncio.Task) -> None:
        # Failures are logged by the task group.
        if not task.cancelled() and task.exception() is not None:
            self._report(RecoveryEvent.CONN_ERROR)

    def _spawn(self, coroutine: t.Coroutine, name: str) -> None:
        task = self._connection_tasks.create_task(coroutine, name=name)
        task.add_done_callback(self._on_task_done)

    async def _supervise(self) -> None:
        loop = asyncio.get_running_loop()
        delay = 0.0
        while True:
            # DISCONNECTED: wait out the reconnect window.
            if delay:
                await asyncio.sleep(delay)
            self._step(RecoveryEvent.BACKOFF_ELAPSED)

            # CONNECTING.
            self.last_attempt = loop.time()
            event = await self._connect()
            if event is RecoveryEvent.REGISTER_ACKED:
                transition = self._step(event)
                if Action.RESET_BACKOFF in transition.actions:
                    self.backoff.reset()
                self._send_ready.set()
                self.logger.info(
                    "Registered", extra={"data": {"endpoint": self.endpoint}}
                )
                # REGISTERED: run until a fault is detected.
                assert self._fault is not None  # noqa: S101
                event = await self._fault

            # DRAINING.
            self._step(event)
            await self._cleanup()
            self._step(RecoveryEvent.CLEANUP_DONE)
            delay = self.backoff.failure()
            self.logger.info(
                "Connection lost, reconnecting",
                extra={"data": {"event": str(event), "delay": round(delay, 3)}},
            )

    async def _connect(self) -> RecoveryEvent:
        loop = asyncio.get_running_loop()
        try:
            connection = await open_connection(
                self.endpoint, timeout=self.register_timeout
            )
        except TargetDown:
            return RecoveryEvent.CONN_ERROR

        self._connection = connection
        self.stats.connections += 1
        self.last_rx = loop.time()
        self._heartbeat_sent = None
        self._fault = loop.create_future()
        self._register_ack = loop.create_future()
        transition = self._step(RecoveryEvent.CONN_ESTABLISHED)
        if Action.SEND_REGISTRATION not in transition.actions:
            return RecoveryEvent.CONN_ERROR

        # Registration then the desired subscriptions, ahead of any queued data.
        self.control_queue = deque(
            [RegisterFrame(self.node_id)]
            + [SubscribeFrame(sub) for sub in self.desired_subscriptions]
            + [f for f in self.control_queue if isinstance(f, StatsRequestFrame)]
        )
        self._spawn(self._reader(connection), name=f"client-reader-{self.node_id}")
        self._spawn(
            self._registration_writer(connection), name=f"client-writer-{self.node_id}"
        )

        done, _ = await asyncio.wait(
            {self._register_ack, self._fault},
            timeout=self.register_timeout,
            return_when=asyncio.FIRST_COMPLETED,
        )
        if self._register_ack in done:
            status = self._register_ack.result()
            if status is AckStatus.OK:
                self.stats.registrations += 1
                self._spawn(
                    self._watchdog(connection), name=f"client-watchdog-{self.node_id}"
                )
                return RecoveryEvent.REGISTER_ACKED
            self.logger.error(
                "Registration rejected", extra={"data": {"status": status.name}}
            )
        elif self._fault in done:
            return self._fault.result()
        return RecoveryEvent.CONN_ERROR

    async def _registration_writer(self, connection: Connection) -> None:
        # Hold data until the broker acknowledged the registration.
        registration = []
        while self.control_queue:
            registration.append(self.codec.encode(self.control_queue.popleft()))
        await connection.write(b"".join(registration))
        assert self._register_ack is not None  # noqa: S101
        await asyncio.shield(self._register_ack)
        await self._writer(connection)

    async def _cleanup(self) -> None:
        await self._connection_tasks.close()
        if self._connection is not None:
            self._connection.close()
            await self._connection.wait_closed()
            self._connection = None
        if self._register_ack is not None and not self._register_ack.done():
            self._register_ack.cancel()
        self._register_ack = None
        if self._fault is not None and not self._fault.done():
            self._fault.cancel()
        self._fault = None
