import typing as t

import asyncio
import os

from anchor_runtime.config_definitions import BrokerConfig
from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.core.errors import SendBackpressure
from anchor_runtime.core.errors import TargetDown
from anchor_runtime.core.errors import VersionMismatch
from anchor_runtime.utils.asyncutils import TasksGroup
from anchor_runtime.utils.asyncutils import periodic
from anchor_runtime.utils.log import getLogger
from anchor_runtime.wire import DATA_FRAMES
from anchor_runtime.wire import AckFrame
from anchor_runtime.wire import AckStatus
from anchor_runtime.wire import Frame
from anchor_runtime.wire import FrameCodec
from anchor_runtime.wire import FrameDecoder
from anchor_runtime.wire import RegisterFrame

from .broker import Broker
from .broker import NodeSession
from .hooks import BrokerHooks
from .hooks import CloseReason
from .state import BrokerState
from .transport import Connection
from .transport import Endpoint
from .transport import Listener
from .transport import start_server

# Frames coalesced into a single transport write.
MAX_COALESCE = 64


class SessionSender:
    """Write frames of one session from its own task.

    Data frames are bounded by `max_pending` and refused with
    `SendBackpressure` beyond it; control frames are always accepted.
    """

    def __init__(
        self, connection: Connection, codec: FrameCodec, *, max_pending: int
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.connection = connection
        self.codec = codec
        self.max_pending = max_pending
        self.pending_data = 0
        self.closed = False
        self.queue: asyncio.Queue[t.Optional[Frame]] = asyncio.Queue()
        self.task = asyncio.create_task(
            self._run(), name=f"sender-{connection.peer}"
        )

    def can_send(self) -> bool:
        return not self.closed and self.pending_data < self.max_pending

    def send(self, frame: Frame) -> None:
        if self.closed:
            return
        if isinstance(frame, DATA_FRAMES):
            if self.pending_data >= self.max_pending:
                raise SendBackpressure(
                    f"{self.pending_data} data frames already pending"
                )
            self.pending_data += 1
        self.queue.put_nowait(frame)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.queue.put_nowait(None)

    def _encode(self, frame: Frame) -> bytes:
        if isinstance(frame, DATA_FRAMES):
            self.pending_data -= 1
        try:
            return self.codec.encode(frame)
        except ProtocolError:
            self.logger.exception("Dropping unencodable frame")
            return b""

    async def _run(self) -> None:
        try:
            while True:
                frame = await self.queue.get()
                if frame is None:
                    break
                chunks = [self._encode(frame)]
                stop = False
                while not self.queue.empty() and len(chunks) < MAX_COALESCE:
                    next_frame = self.queue.get_nowait()
                    if next_frame is None:
                        stop = True
                        break
                    chunks.append(self._encode(next_frame))
                await self.connection.write(b"".join(chunks))
                if stop:
                    break
        except TargetDown:
            pass
        finally:
            self.closed = True
            self.connection.close()


class BrokerServer:
    """Serve the broker over a transport endpoint.

    Drives the flush and liveness loops and, when a state directory is
    configured, mirrors counters in a records region.
    """

    def __init__(
        self,
        options: BrokerConfig,
        *,
        hooks: t.Optional[BrokerHooks] = None,
        codec: t.Optional[FrameCodec] = None,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.broker = Broker(options, hooks=hooks)
        self.codec = codec or FrameCodec(max_frame=options.max_frame)
        self.tasks = TasksGroup(name="broker-server")
        self.connections: set[asyncio.Task] = set()
        self.listener: t.Optional[Listener] = None
        self.state: t.Optional[BrokerState] = None
        self._pending = asyncio.Event()
        self._stopped = asyncio.Event()

    @property
    def hooks(self) -> BrokerHooks:
        return self.broker.hooks

    @property
    def endpoint(self) -> Endpoint:
        if self.listener is None:
            raise RuntimeError("Broker server is not started")
        return self.listener.endpoint

    async def start(self) -> Endpoint:
        if self.options.state_dir:
            self.state = BrokerState.create(
                os.path.join(self.options.state_dir, "broker.ancr")
            )
            self.tasks.create_task(
                periodic(self.options.state_interval_ms / 1000, self._write_state),
                name="broker-state",
            )

        self.listener = await start_server(
            self.options.listen, self._handle_connection
        )
        self.tasks.create_task(self._flush_driver(), name="broker-flush")
        self.tasks.create_task(
            periodic(self.options.heartbeat_interval_ms / 1000, self._check_liveness),
            name="broker-liveness",
        )
        self.logger.info(
            "Broker listening", extra={"data": {"endpoint": str(self.endpoint)}}
        )
        return self.endpoint

    async def run(self) -> None:
        await self.start()
        try:
            await self._stopped.wait()
        finally:
            await self.close()

    def stop(self) -> None:
        self._stopped.set()

    async def close(self) -> None:
        if self.listener is not None:
            self.listener.close()
        self.broker.close()
        await self.tasks.close()
        if self.connections:
            await asyncio.wait(set(self.connections), timeout=1.0)
        if self.listener is not None:
            await self.listener.wait_closed()
            self.listener = None
        if self.state is not None:
            self.state.close()
            self.state = None

    async def __aenter__(self) -> "BrokerServer":
        await self.start()
        return self

    async def __aexit__(self, *exc_info: t.Any) -> None:
        await self.close()

    async def _flush_driver(self) -> None:
        tick = self.options.tick_ms / 1000
        while True:
            if not self.broker.has_pending:
                self._pending.clear()
                await self._pending.wait()
            await asyncio.sleep(tick)
            self.broker.flush_batches()

    def _check_liveness(self) -> None:
        self.broker.check_liveness()

    def _write_state(self) -> None:
        if self.state is not None:
            self.state.write(self.broker)

    def _dispatch(self, session: NodeSession, frames: list[Frame]) -> None:
        for frame in frames:
            for reply in self.broker.handle_frame(session, frame):
                session.sender.send(reply)
        if self.broker.has_pending:
            self._pending.set()

    async def _handle_connection(self, connection: Connection) -> None:
        task = asyncio.current_task()
        if task is not None:
            self.connections.add(task)
            task.add_done_callback(self.connections.discard)

        decoder = FrameDecoder(self.codec)
        sender = SessionSender(
            connection, self.codec, max_pending=self.options.send_queue_frames
        )
        session: t.Optional[NodeSession] = None
        reason = CloseReason.DISCONNECTED
        try:
            frames: list[Frame] = []
            while not frames:
                data = await asyncio.wait_for(
                    connection.read(), self.options.heartbeat_timeout_ms / 1000
                )
                if not data:
                    return
                frames = decoder.feed(data)

            register, rest = frames[0], frames[1:]
            if not isinstance(register, RegisterFrame):
                sender.send(AckFrame(0, AckStatus.ERROR))
                return
            try:
                session = self.broker.register_node(
                    register.identity, register.protocol_version, sender
                )
            except VersionMismatch:
                sender.send(AckFrame(0, AckStatus.VERSION_MISMATCH))
                return
            sender.send(AckFrame(0))
            self._dispatch(session, rest)

            while not session.closed:
                data = await connection.read()
                if not data:
                    break
                self._dispatch(session, decoder.feed(data))
        except asyncio.TimeoutError:
            self.logger.warning(
                "Connection did not register in time",
                extra={"data": {"peer": connection.peer}},
            )
        except ProtocolError as e:
            reason = CloseReason.PROTOCOL_ERROR
            self.logger.warning(
                "Closing connection on protocol error",
                extra={"data": {"peer": connection.peer, "error": repr(e)}},
            )
            if session is None:
                sender.send(AckFrame(0, AckStatus.ERROR))
        finally:
            if session is not None:
                self.broker.close_session(session, reason)
            sender.close()
            await sender.task
