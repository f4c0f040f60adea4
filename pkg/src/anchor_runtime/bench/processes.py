"""Child processes driven by the bench harnesses.

Both children run `python -m anchor_runtime`, so they share nothing with the
harness but the host clock.
"""
import typing as t

import asyncio
import contextlib
import dataclasses
import os
import shutil
import signal
import sys
import time
from array import array

import numpy as np

from anchor_runtime.bus import open_connection
from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import ClientConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.errors import AnchorError
from anchor_runtime.core.errors import HarnessFault
from anchor_runtime.utils.log import getLogger

READY_LINE = b"ready"
START_TIMEOUT = 10.0
STOP_TIMEOUT = 5.0


def anchorctl(*args: str, config_path: t.Optional[str] = None) -> list[str]:
    command = [sys.executable, "-m", "anchor_runtime", *args]
    if config_path:
        command += ["--config", config_path]
    return command


async def terminate(process: asyncio.subprocess.Process) -> None:
    if process.returncode is not None:
        return
    with contextlib.suppress(ProcessLookupError):
        process.send_signal(signal.SIGTERM)
    try:
        await asyncio.wait_for(process.wait(), STOP_TIMEOUT)
    except asyncio.TimeoutError:
        with contextlib.suppress(ProcessLookupError):
            process.kill()
        await process.wait()


class BrokerProcess:
    """A broker child which can be hard killed and respawned."""

    def __init__(
        self,
        listen: str,
        *,
        state_dir: t.Optional[str] = None,
        config_path: t.Optional[str] = None,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.listen = listen
        self.state_dir = state_dir
        self.config_path = config_path
        self.process: t.Optional[asyncio.subprocess.Process] = None

    async def start(self, timeout: float = START_TIMEOUT) -> None:
        """Spawn the broker and wait until it accepts connections."""
        args = ["broker", "--listen", self.listen]
        if self.state_dir:
            args += ["--state-dir", self.state_dir]
        try:
            self.process = await asyncio.create_subprocess_exec(
                *anchorctl(*args, config_path=self.config_path)
            )
        except OSError as e:
            raise HarnessFault(f"Cannot spawn broker: {e}") from e

        deadline = time.monotonic() + timeout
        while True:
            if self.process.returncode is not None:
                raise HarnessFault(
                    f"Broker exited with status {self.process.returncode}"
                )
            try:
                connection = await open_connection(self.listen, timeout=0.5)
            except AnchorError:
                if time.monotonic() > deadline:
                    await terminate(self.process)
                    raise HarnessFault(
                        f"Broker not listening on {self.listen} after {timeout}s"
                    ) from None
                await asyncio.sleep(0.05)
                continue
            connection.close()
            self.logger.info(
                "Broker up",
                extra={"data": {"listen": self.listen, "pid": self.process.pid}},
            )
            return

    async def kill(self) -> None:
        """SIGKILL the broker and remove what it left on disk."""
        if self.process is not None:
            with contextlib.suppress(ProcessLookupError):
                self.process.kill()
            await self.process.wait()
            self.logger.info(
                "Broker killed", extra={"data": {"pid": self.process.pid}}
            )
        self.remove_artifacts()

    def remove_artifacts(self) -> None:
        if self.state_dir:
            shutil.rmtree(self.state_dir, ignore_errors=True)

    async def stop(self) -> None:
        if self.process is not None:
            await terminate(self.process)


@dataclasses.dataclass
class Deliveries:
    seq: np.ndarray
    sent_ns: np.ndarray
    received_ns: np.ndarray

    @property
    def latency_ns(self) -> np.ndarray:
        return self.received_ns - self.sent_ns

    def __len__(self) -> int:
        return int(self.seq.size)

    @classmethod
    def load(cls, path: str) -> "Deliveries":
        with np.load(path) as data:
            return cls(
                seq=data["seq"], sent_ns=data["sent_ns"], received_ns=data["received_ns"]
            )


class DeliveryRecorder:
    """Subscription handler stamping each delivery with the monotonic clock."""

    def __init__(self) -> None:
        self.seq = array("q")
        self.sent_ns = array("q")
        self.received_ns = array("q")

    def __call__(self, envelope: MessageEnvelope) -> None:
        self.received_ns.append(time.monotonic_ns())
        self.seq.append(envelope.seq)
        self.sent_ns.append(envelope.ts_monotonic_ns)

    def deliveries(self) -> Deliveries:
        return Deliveries(
            seq=np.frombuffer(self.seq, dtype=np.int64),
            sent_ns=np.frombuffer(self.sent_ns, dtype=np.int64),
            received_ns=np.frombuffer(self.received_ns, dtype=np.int64),
        )

    def save(self, path: str) -> None:
        deliveries = self.deliveries()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as f:
            np.savez(
                f,
                seq=deliveries.seq,
                sent_ns=deliveries.sent_ns,
                received_ns=deliveries.received_ns,
            )


async def record_deliveries(
    options: ClientConfig,
    *,
    endpoint: str,
    channel: str,
    node_id: str,
    out: str,
    stop: asyncio.Event,
    on_ready: t.Callable[[], None],
    timeout: float = START_TIMEOUT,
) -> int:
    """Subscriber side of a bench run, until `stop` is set.

    Deliveries are saved to `out` on the way out.
    """
    recorder = DeliveryRecorder()
    client = BusClient(options, node_id=node_id, endpoint=endpoint)
    client.subscribe(channel, recorder)
    client.start()
    try:
        await client.wait_registered(timeout)
        on_ready()
        await stop.wait()
    finally:
        await client.close()
        recorder.save(out)
    return len(recorder.seq)


class SubscriberProcess:
    """A subscriber child recording deliveries to a file."""

    def __init__(
        self,
        endpoint: str,
        *,
        channel: str,
        node_id: str,
        out: str,
        config_path: t.Optional[str] = None,
    ) -> None:
        self.endpoint = endpoint
        self.channel = channel
        self.node_id = node_id
        self.out = out
        self.config_path = config_path
        self.process: t.Optional[asyncio.subprocess.Process] = None

    async def start(self, timeout: float = START_TIMEOUT) -> None:
        """Spawn the subscriber and wait until it is registered."""
        args = anchorctl(
            "bench",
            "subscribe",
            "--endpoint",
            self.endpoint,
            "--channel",
            self.channel,
            "--node-id",
            self.node_id,
            "--out",
            self.out,
            config_path=self.config_path,
        )
        self.process = await asyncio.create_subprocess_exec(
            *args, stdout=asyncio.subprocess.PIPE
        )
        assert self.process.stdout is not None
        try:
            line = await asyncio.wait_for(self.process.stdout.readline(), timeout)
        except asyncio.TimeoutError:
            line = b""
        if line.strip() != READY_LINE:
            await terminate(self.process)
            raise HarnessFault(f"Subscriber did not register within {timeout}s")

    async def terminate(self) -> None:
        if self.process is not None:
            await terminate(self.process)

    async def stop(self) -> Deliveries:
        """Stop the subscriber and load what it recorded."""
        if self.process is None:
            raise HarnessFault("Subscriber was not started")
        await self.terminate()
        if self.process.returncode != 0:
            raise HarnessFault(
                f"Subscriber exited with status {self.process.returncode}"
            )
        return Deliveries.load(self.out)


async def wait_registered(client: BusClient, timeout: float = START_TIMEOUT) -> None:
    try:
        await client.wait_registered(timeout)
    except asyncio.TimeoutError:
        raise HarnessFault(
            f"{client.node_id} did not register on {client.endpoint} within {timeout}s"
        ) from None
