import typing as t

import asyncio
import contextlib


# Adapted from https://github.com/aio-libs/aiopg/blob/master/tests/conftest.py#L416
class TcpProxy:
    """
    TCP proxy in front of a broker. Allows simulating connection breaks and
    silent peers in tests.
    """

    MAX_BYTES = 65536

    def __init__(
        self,
        *,
        src_host: str = "127.0.0.1",
        src_port: int = 0,
        dst_host: str = "127.0.0.1",
        dst_port: int,
    ) -> None:
        self.src_host = src_host
        self.src_port = src_port
        self.dst_host = dst_host
        self.dst_port = dst_port
        self.connections: set[asyncio.StreamWriter] = set()
        self.pipes: set[asyncio.Task] = set()
        self.server: t.Optional[asyncio.AbstractServer] = None
        # Cleared to hold every byte in both directions.
        self.flowing = asyncio.Event()
        self.flowing.set()
        self.accepted = 0

    @property
    def endpoint(self) -> str:
        return f"{self.src_host}:{self.port}"

    @property
    def port(self) -> int:
        if self.server is None:
            raise RuntimeError("Proxy is not started")
        return self.server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        self.server = await asyncio.start_server(
            self._handle_client,
            host=self.src_host,
            port=self.src_port,
        )

    def pause(self) -> None:
        self.flowing.clear()

    def resume(self) -> None:
        self.flowing.set()

    async def disconnect(self) -> None:
        while self.connections:
            writer = self.connections.pop()
            writer.close()
            with contextlib.suppress(Exception):
                await writer.wait_closed()

    async def _pipe(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            while not reader.at_eof():
                bytes_read = await reader.read(TcpProxy.MAX_BYTES)
                await self.flowing.wait()
                writer.write(bytes_read)
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    async def _handle_client(
        self,
        client_reader: asyncio.StreamReader,
        client_writer: asyncio.StreamWriter,
    ) -> None:
        self.accepted += 1
        try:
            server_reader, server_writer = await asyncio.open_connection(
                host=self.dst_host, port=self.dst_port
            )
        except OSError:
            client_writer.close()
            return

        self.connections.add(server_writer)
        self.connections.add(client_writer)

        pipes = {
            asyncio.create_task(self._pipe(server_reader, client_writer)),
            asyncio.create_task(self._pipe(client_reader, server_writer)),
        }
        self.pipes |= pipes
        done, _ = await asyncio.wait(pipes)
        self.pipes -= pipes
        for fut in done:
            with contextlib.suppress(Exception):
                await fut

    async def close(self) -> None:
        self.resume()
        await self.disconnect()
        for pipe in list(self.pipes):
            pipe.cancel()
        if self.server:
            self.server.close()
            await self.server.wait_closed()
