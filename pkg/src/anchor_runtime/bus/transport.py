"""Byte-stream transports.

Endpoints are either ``host:port`` (TCP) or ``mem://name`` for the
in-process loopback network used by tests and single-process runs.
"""
import typing as t

import abc
import asyncio
import contextlib
import dataclasses
from collections.abc import Awaitable

from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.errors import TargetDown

READ_SIZE = 1 << 16
MEMORY_SCHEME = "mem://"


@dataclasses.dataclass(frozen=True)
class Endpoint:
    scheme: t.Literal["tcp", "mem"]
    host: str
    port: int = 0

    def __str__(self) -> str:
        if self.scheme == "mem":
            return MEMORY_SCHEME + self.host
        return f"{self.host}:{self.port}"


def parse_endpoint(value: str) -> Endpoint:
    """
    >>> parse_endpoint("127.0.0.1:7450")
    Endpoint(scheme='tcp', host='127.0.0.1', port=7450)
    >>> parse_endpoint("mem://cluster-a")
    Endpoint(scheme='mem', host='cluster-a', port=0)
    """
    if value.startswith(MEMORY_SCHEME):
        name = value[len(MEMORY_SCHEME) :]
        if not name:
            raise ConfigError(f"Invalid endpoint: {value!r}")
        return Endpoint("mem", name)
    host, sep, port = value.rpartition(":")
    if not sep or not host or not port.isdigit() or int(port) > 65535:
        raise ConfigError(f"Invalid endpoint: {value!r}")
    return Endpoint("tcp", host, int(port))


class Connection(abc.ABC):
    peer: str

    @abc.abstractmethod
    async def read(self) -> bytes:
        """Next chunk of bytes, b"" once the peer closed."""

    @abc.abstractmethod
    async def write(self, data: bytes) -> None:
        """Write `data`, waiting for the transport to accept it."""

    @abc.abstractmethod
    def close(self) -> None:
        ...

    @abc.abstractmethod
    async def wait_closed(self) -> None:
        ...

    @property
    @abc.abstractmethod
    def is_closing(self) -> bool:
        ...


ConnectionHandler = t.Callable[[Connection], Awaitable[None]]


class Listener(abc.ABC):
    @property
    @abc.abstractmethod
    def endpoint(self) -> Endpoint:
        ...

    @abc.abstractmethod
    def close(self) -> None:
        ...

    @abc.abstractmethod
    async def wait_closed(self) -> None:
        ...


class StreamConnection(Connection):
    def __init__(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        self.reader = reader
        self.writer = writer
        peername = writer.get_extra_info("peername")
        self.peer = f"{peername[0]}:{peername[1]}" if peername else "unknown"

    async def read(self) -> bytes:
        try:
            return await self.reader.read(READ_SIZE)
        except ConnectionError:
            return b""

    async def write(self, data: bytes) -> None:
        if self.writer.is_closing():
            raise TargetDown(f"Connection to {self.peer} is closed")
        try:
            self.writer.write(data)
            await self.writer.drain()
        except ConnectionError as e:
            raise TargetDown(f"Connection to {self.peer} lost: {e}") from e

    def close(self) -> None:
        self.writer.close()

    async def wait_closed(self) -> None:
        with contextlib.suppress(Exception):
            await self.writer.wait_closed()

    @property
    def is_closing(self) -> bool:
        return self.writer.is_closing()


class TcpListener(Listener):
    def __init__(self, server: asyncio.AbstractServer) -> None:
        self.server = server

    @property
    def endpoint(self) -> Endpoint:
        host, port = self.server.sockets[0].getsockname()[:2]
        return Endpoint("tcp", host, port)

    def close(self) -> None:
        self.server.close()

    async def wait_closed(self) -> None:
        await self.server.wait_closed()


class LoopbackConnection(Connection):
    """One end of an in-memory duplex pipe."""

    def __init__(self, peer: str) -> None:
        self.peer = peer
        self.inbox: asyncio.Queue[bytes] = asyncio.Queue()
        self.other: t.Optional["LoopbackConnection"] = None
        self.closed = False
        self._eof = False
        self._closed_event = asyncio.Event()

    @classmethod
    def pair(
        cls, a: str = "client", b: str = "server"
    ) -> tuple["LoopbackConnection", "LoopbackConnection"]:
        left, right = cls(peer=b), cls(peer=a)
        left.other, right.other = right, left
        return left, right

    async def read(self) -> bytes:
        if self._eof:
            return b""
        data = await self.inbox.get()
        if not data:
            self._eof = True
        return data

    async def write(self, data: bytes) -> None:
        other = self.other
        if self.closed or other is None or other.closed:
            raise TargetDown(f"Loopback connection to {self.peer} is closed")
        other.inbox.put_nowait(bytes(data))
        # Let the reader run, as a socket write would.
        await asyncio.sleep(0)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._closed_event.set()
        self.inbox.put_nowait(b"")
        if self.other is not None and not self.other.closed:
            self.other.inbox.put_nowait(b"")

    async def wait_closed(self) -> None:
        await self._closed_event.wait()

    @property
    def is_closing(self) -> bool:
        return self.closed


class LoopbackListener(Listener):
    def __init__(
        self, network: "LoopbackNetwork", name: str, handler: ConnectionHandler
    ) -> None:
        self.network = network
        self.name = name
        self.handler = handler
        self.tasks: set[asyncio.Task] = set()
        self.connections: set[LoopbackConnection] = set()

    @property
    def endpoint(self) -> Endpoint:
        return Endpoint("mem", self.name)

    def accept(self, connection: LoopbackConnection) -> None:
        self.connections.add(connection)
        task = asyncio.create_task(self.handler(connection))
        self.tasks.add(task)
        task.add_done_callback(self.tasks.discard)

    def close(self) -> None:
        self.network.listeners.pop(self.name, None)

    async def wait_closed(self) -> None:
        if self.tasks:
            await asyncio.wait(set(self.tasks))


class LoopbackNetwork:
    def __init__(self) -> None:
        self.listeners: dict[str, LoopbackListener] = {}
        self._counter = 0

    def listen(self, name: str, handler: ConnectionHandler) -> LoopbackListener:
        if name in self.listeners:
            raise TargetDown(f"Loopback endpoint {name!r} is already bound")
        listener = LoopbackListener(self, name, handler)
        self.listeners[name] = listener
        return listener

    def connect(self, name: str) -> LoopbackConnection:
        listener = self.listeners.get(name)
        if listener is None:
            raise TargetDown(f"No loopback listener on {name!r}")
        self._counter += 1
        client, server = LoopbackConnection.pair(
            a=f"{name}-peer{self._counter}", b=name
        )
        listener.accept(server)
        return client


loopback = LoopbackNetwork()


async def open_connection(
    endpoint: t.Union[str, Endpoint], *, timeout: t.Optional[float] = None
) -> Connection:
    if isinstance(endpoint, str):
        endpoint = parse_endpoint(endpoint)
    if endpoint.scheme == "mem":
        return loopback.connect(endpoint.host)
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(endpoint.host, endpoint.port), timeout
        )
    except (OSError, asyncio.TimeoutError) as e:
        raise TargetDown(f"Cannot connect to {endpoint}: {e!r}") from e
    return StreamConnection(reader, writer)


async def start_server(
    endpoint: t.Union[str, Endpoint], handler: ConnectionHandler
) -> Listener:
    if isinstance(endpoint, str):
        endpoint = parse_endpoint(endpoint)
    if endpoint.scheme == "mem":
        return loopback.listen(endpoint.host, handler)

    async def on_client(
        reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        await handler(StreamConnection(reader, writer))

    try:
        server = await asyncio.start_server(
            on_client, host=endpoint.host, port=endpoint.port, reuse_address=True
        )
    except OSError as e:
        raise TargetDown(f"Cannot listen on {endpoint}: {e}") from e
    return TcpListener(server)
