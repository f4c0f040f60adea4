import typing as t

import dataclasses
import itertools
import os
from collections.abc import AsyncIterator
from collections.abc import Awaitable
from collections.abc import Iterator

import pytest

from anchor_runtime.bus import BrokerServer
from anchor_runtime.client import BusClient
from anchor_runtime.config import AnchorConfig
from anchor_runtime.config import BrokerConfig
from anchor_runtime.config import ClientConfig
from anchor_runtime.config import Config
from anchor_runtime.config import default_config

from tests.config import config as test_config
from tests.utils.metrics import MetricsCapture
from tests.utils.tcp_proxy import TcpProxy

_names = itertools.count(1)


@pytest.fixture(scope="session")
def config() -> Config:
    return Config().load_objects([default_config, test_config])


@pytest.fixture
def anchor_config(config: Config, tmp_path: t.Any) -> AnchorConfig:
    return config.load_object(
        {
            "records": {"region_path": os.path.join(tmp_path, "anchor.ancr")},
            "demo": {"log_dir": os.path.join(tmp_path, "logs")},
            "bench": {"out_dir": os.path.join(tmp_path, "results")},
        }
    ).c


@pytest.fixture
def mem_endpoint() -> str:
    return f"mem://test-{os.getpid()}-{next(_names)}"


@pytest.fixture
def broker_options(anchor_config: AnchorConfig, mem_endpoint: str) -> BrokerConfig:
    return dataclasses.replace(anchor_config.broker, listen=mem_endpoint)


@pytest.fixture
def client_options(anchor_config: AnchorConfig, mem_endpoint: str) -> ClientConfig:
    return dataclasses.replace(anchor_config.client, endpoint=mem_endpoint)


@pytest.fixture
async def broker(broker_options: BrokerConfig) -> AsyncIterator[BrokerServer]:
    async with BrokerServer(broker_options) as server:
        yield server


@pytest.fixture
async def tcp_broker(anchor_config: AnchorConfig) -> AsyncIterator[BrokerServer]:
    options = dataclasses.replace(anchor_config.broker, listen="127.0.0.1:0")
    async with BrokerServer(options) as server:
        yield server


ClientFactory = t.Callable[..., Awaitable[BusClient]]


@pytest.fixture
async def make_client(
    client_options: ClientConfig, broker: BrokerServer
) -> AsyncIterator[ClientFactory]:
    """Start registered clients on the in-memory broker."""
    clients: list[BusClient] = []

    async def factory(
        node_id: str, *, start: bool = True, **kwargs: t.Any
    ) -> BusClient:
        client = BusClient(client_options, node_id=node_id, **kwargs)
        clients.append(client)
        if start:
            client.start()
            await client.wait_registered(timeout=2)
        return client

    yield factory
    for client in clients:
        await client.close()


@pytest.fixture
async def tcp_proxy() -> AsyncIterator[t.Callable[[int], Awaitable[TcpProxy]]]:
    proxies: list[TcpProxy] = []

    async def factory(dst_port: int) -> TcpProxy:
        proxy = TcpProxy(dst_port=dst_port)
        await proxy.start()
        proxies.append(proxy)
        return proxy

    yield factory
    for proxy in proxies:
        await proxy.close()


@pytest.fixture
def metrics_capture() -> Iterator[MetricsCapture]:
    capture = MetricsCapture()
    capture.reset_provider()
    capture.setup_provider()
    yield capture
    capture.reset_provider()
