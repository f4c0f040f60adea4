import typing as t

import asyncio
import dataclasses
import logging
import time

import pytest

from anchor_runtime.bench import percentiles
from anchor_runtime.bus import BrokerServer
from anchor_runtime.client import Accepted
from anchor_runtime.client import BusClient
from anchor_runtime.client import ClientHooks
from anchor_runtime.client import ClientState
from anchor_runtime.client import DroppedLocal
from anchor_runtime.client import RecoveryEvent
from anchor_runtime.config import BrokerConfig
from anchor_runtime.config import ClientConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.errors import PayloadTooLarge
from anchor_runtime.loggers.bus_logger import BusLogger
from anchor_runtime.wire import FrameCodec
from anchor_runtime.wire import max_frame_for
from anchor_runtime.wire.codec import DEFAULT_MAX_FRAME

from tests.conftest import ClientFactory
from tests.utils import Inbox
from tests.utils import make_envelope
from tests.utils import wait_until
from tests.utils.tcp_proxy import TcpProxy


def subscriptions(broker: BrokerServer) -> int:
    return len(broker.broker.routing)


async def test_publish_subscribe(
    broker: BrokerServer, make_client: ClientFactory
) -> None:
    inbox = Inbox()
    subscriber = await make_client("sub")
    publisher = await make_client("pub")
    subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(broker) == 1)

    results = [publisher.publish("/cmd/local/3", b"%d" % i) for i in range(3)]
    assert results == [Accepted(seq=1), Accepted(seq=2), Accepted(seq=3)]
    publisher.publish("/status/local/3", b"ignored")

    await inbox.wait_for(3)
    assert inbox.payloads == [b"0", b"1", b"2"]
    assert [e.publisher_id for e in inbox.envelopes] == ["pub"] * 3
    assert [e.seq for e in inbox.envelopes] == [1, 2, 3]
    assert publisher.stats.published == 4
    await wait_until(lambda: publisher.stats.sent == 4)
    assert subscriber.stats.received == 3
    assert subscriber.stats.dispatched == 3


async def test_self_delivery(broker: BrokerServer, make_client: ClientFactory) -> None:
    plain, allowing = Inbox(), Inbox()
    client = await make_client("node")
    client.subscribe("cmd", plain)
    await wait_until(lambda: subscriptions(broker) == 1)
    client.publish("/cmd/local/0", b"first")
    await asyncio.sleep(0.05)
    assert len(plain) == 0

    client.subscribe("cmd", allowing, allow_self=True)
    await wait_until(lambda: subscriptions(broker) == 2)
    client.publish("/cmd/local/0", b"second")
    await allowing.wait_for(1)
    assert allowing.payloads == [b"second"]
    # Only the subscription allowing it sees its own messages.
    await asyncio.sleep(0.05)
    assert len(plain) == 0


async def test_directed_delivery(
    broker: BrokerServer, make_client: ClientFactory
) -> None:
    directed, broadcast = Inbox(), Inbox()
    target = await make_client("target")
    other = await make_client("other")
    publisher = await make_client("pub")
    target.subscribe("cmd", directed, directed=True)
    other.subscribe("cmd", broadcast)
    await wait_until(lambda: subscriptions(broker) == 2)

    publisher.publish("/cmd/local/target/7", b"to-target")
    publisher.publish("/cmd/local/7", b"to-all")
    await directed.wait_for(1)
    await broadcast.wait_for(1)
    await asyncio.sleep(0.05)
    assert directed.payloads == [b"to-target"]
    assert broadcast.payloads == [b"to-all"]


async def test_unsubscribe(broker: BrokerServer, make_client: ClientFactory) -> None:
    inbox = Inbox()
    subscriber = await make_client("sub")
    publisher = await make_client("pub")
    sid = subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(broker) == 1)

    subscriber.unsubscribe(sid)
    subscriber.unsubscribe(sid)
    assert subscriber.desired_subscriptions == []
    await wait_until(lambda: subscriptions(broker) == 0)
    publisher.publish("/cmd/local/0")
    await asyncio.sleep(0.05)
    assert len(inbox) == 0


async def test_subscriptions_replayed_on_registration(
    broker: BrokerServer, make_client: ClientFactory
) -> None:
    inbox = Inbox()
    subscriber = await make_client("sub", start=False)
    subscriber.subscribe("cmd", inbox, region="cluster_a")
    subscriber.start()
    await subscriber.wait_registered(timeout=2)
    await wait_until(lambda: subscriptions(broker) == 1)

    publisher = await make_client("pub")
    publisher.publish("/cmd/cluster_b/0", b"other region")
    publisher.publish("/cmd/cluster_a/0", b"matching")
    await inbox.wait_for(1)
    assert inbox.payloads == [b"matching"]


async def test_send_queue_drops_oldest(
    broker: BrokerServer, client_options: ClientConfig, make_client: ClientFactory
) -> None:
    inbox = Inbox()
    subscriber = await make_client("sub")
    subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(broker) == 1)

    dropped: list[MessageEnvelope] = []
    hooks = ClientHooks()
    hooks.message_dropped.register(dropped.append)
    options = dataclasses.replace(client_options, send_capacity=3)
    # Not started yet: everything stays in the send queue.
    publisher = BusClient(options, node_id="pub", hooks=hooks)
    results = [publisher.publish("/cmd/local/0", b"%d" % i) for i in range(5)]
    assert [r.evicted for r in results[:3]] == [None] * 3
    assert [r.evicted.payload for r in results[3:]] == [b"0", b"1"]
    assert [e.payload for e in dropped] == [b"0", b"1"]
    assert publisher.stats.dropped_local == 2

    publisher.start()
    try:
        await inbox.wait_for(3)
        assert inbox.payloads == [b"2", b"3", b"4"]
    finally:
        await publisher.close()


async def test_publish_errors(make_client: ClientFactory) -> None:
    client = await make_client("pub")
    with pytest.raises(PayloadTooLarge):
        client.publish("/cmd/local/0", b"x" * (client.options.max_payload + 1))
    await client.close()
    assert client.state is ClientState.DISCONNECTED
    assert client.publish("/cmd/local/0") == DroppedLocal("closed")
    assert client.forward(make_envelope("/cmd/local/0")) == DroppedLocal("closed")


async def test_forward_keeps_identity(
    broker: BrokerServer, make_client: ClientFactory
) -> None:
    inbox = Inbox()
    subscriber = await make_client("sub")
    relay = await make_client("relay")
    subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(broker) == 1)

    envelope = make_envelope("/cmd/global/0", publisher_id="origin", seq=42)
    assert relay.forward(envelope) == Accepted(seq=42)
    await inbox.wait_for(1)
    assert inbox.envelopes == [envelope]


async def test_request_stats(broker: BrokerServer, make_client: ClientFactory) -> None:
    client = await make_client("n1")
    await make_client("n2")
    stats = await client.request_stats(timeout=2)
    assert stats["sessions"] == 2
    assert {node["node_id"] for node in stats["nodes"]} == {"n1", "n2"}


async def test_handler_errors_are_counted(
    broker: BrokerServer, make_client: ClientFactory, caplog: pytest.LogCaptureFixture
) -> None:
    inbox = Inbox()
    awaited: list[bytes] = []

    def failing(envelope: MessageEnvelope) -> None:
        raise RuntimeError("boom")

    async def slow(envelope: MessageEnvelope) -> None:
        await asyncio.sleep(0)
        awaited.append(envelope.payload)

    subscriber = await make_client("sub")
    publisher = await make_client("pub")
    subscriber.subscribe("cmd", failing)
    subscriber.subscribe("cmd", slow)
    subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(broker) == 3)

    publisher.publish("/cmd/local/0", b"a")
    await inbox.wait_for(1)
    assert awaited == [b"a"]
    assert subscriber.stats.handler_errors == 1
    assert subscriber.stats.dispatched == 2
    assert "Handler failed" in caplog.messages


async def test_reconnects_after_disconnect(
    tcp_broker: BrokerServer,
    tcp_proxy: t.Callable[[int], t.Awaitable[TcpProxy]],
    make_client: ClientFactory,
    caplog: pytest.LogCaptureFixture,
) -> None:
    caplog.set_level(logging.DEBUG, logger="anchor")
    proxy = await tcp_proxy(tcp_broker.endpoint.port)
    hooks = ClientHooks()
    BusLogger().attach_client(hooks)
    inbox = Inbox()
    client = await make_client("flaky", endpoint=proxy.endpoint, hooks=hooks)
    publisher = await make_client("pub", endpoint=str(tcp_broker.endpoint))
    client.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(tcp_broker) == 1)

    await proxy.disconnect()
    await wait_until(lambda: client.stats.registrations == 2, timeout=3)
    assert client.stats.connections >= 2
    assert ClientState.DRAINING in client.machine.states()
    assert "Client state changed" in caplog.messages

    # The subscription was replayed on the new session.
    await wait_until(lambda: subscriptions(tcp_broker) == 1)
    publisher.publish("/cmd/local/0", b"after")
    await inbox.wait_for(1)
    assert inbox.payloads == [b"after"]


async def test_silent_broker_is_detected(
    tcp_broker: BrokerServer,
    tcp_proxy: t.Callable[[int], t.Awaitable[TcpProxy]],
    make_client: ClientFactory,
) -> None:
    proxy = await tcp_proxy(tcp_broker.endpoint.port)
    client = await make_client("quiet", endpoint=proxy.endpoint)
    events = []
    client.hooks.state_changed.register(lambda transition: events.append(transition))

    proxy.pause()
    await wait_until(lambda: not client.is_registered, timeout=3)
    faults = {
        transition.event
        for transition in events
        if transition.previous is ClientState.REGISTERED and transition.changed
    }
    assert faults <= {RecoveryEvent.HEARTBEAT_ACK_MISSING, RecoveryEvent.RX_SILENCE}
    assert faults

    proxy.resume()
    await client.wait_registered(timeout=5)
    assert client.stats.registrations >= 2


async def test_unreachable_broker_backs_off(client_options: ClientConfig) -> None:
    client = BusClient(client_options, node_id="lonely", endpoint="mem://nowhere")
    async with client:
        await wait_until(lambda: client.backoff.failures >= 3, timeout=3)
        assert client.state in (ClientState.DISCONNECTED, ClientState.CONNECTING)
        assert client.stats.connections == 0
        assert client.last_attempt is not None
    with pytest.raises(asyncio.TimeoutError):
        await client.wait_registered(timeout=0.01)


async def test_publish_latency_while_disconnected(client_options: ClientConfig) -> None:
    options = dataclasses.replace(client_options, send_capacity=256)
    client = BusClient(options, node_id="offline", endpoint="mem://nowhere")
    async with client:
        await wait_until(lambda: client.backoff.failures >= 1, timeout=3)
        samples = []
        for i in range(10_000):
            start = time.perf_counter_ns()
            result = client.publish("/cmd/local/0", b"x")
            samples.append(time.perf_counter_ns() - start)
            assert isinstance(result, Accepted)
        assert not client.is_registered
        assert len(client.send_queue) == 256
        assert client.stats.dropped_local == 10_000 - 256
        # Nanoseconds.
        assert percentiles(samples, [99])[0] < 100_000


async def test_registers_once_broker_starts(
    broker_options: BrokerConfig, client_options: ClientConfig, mem_endpoint: str
) -> None:
    endpoint = f"{mem_endpoint}-late"
    client = BusClient(client_options, node_id="early", endpoint=endpoint)
    client.start()
    try:
        await wait_until(lambda: client.backoff.failures >= 2, timeout=3)
        assert client.state in (ClientState.DISCONNECTED, ClientState.CONNECTING)
        options = dataclasses.replace(broker_options, listen=endpoint)
        async with BrokerServer(options) as server:
            await client.wait_registered(timeout=3)
            assert client.state is ClientState.REGISTERED
            assert set(server.broker.sessions) == {"early"}
            await client.close()
    finally:
        await client.close()


async def test_seq_continues_across_reconnect(
    tcp_broker: BrokerServer,
    tcp_proxy: t.Callable[[int], t.Awaitable[TcpProxy]],
    make_client: ClientFactory,
) -> None:
    proxy = await tcp_proxy(tcp_broker.endpoint.port)
    inbox = Inbox()
    subscriber = await make_client("sub", endpoint=str(tcp_broker.endpoint))
    subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(tcp_broker) == 1)
    client = await make_client("flaky", endpoint=proxy.endpoint)

    assert [client.publish("/cmd/local/0") for _ in range(3)] == [
        Accepted(seq=1),
        Accepted(seq=2),
        Accepted(seq=3),
    ]
    await inbox.wait_for(3)

    await proxy.disconnect()
    await wait_until(lambda: client.stats.registrations == 2, timeout=3)
    assert client.publish("/cmd/local/0", b"after") == Accepted(seq=4)
    await inbox.wait_for(4)
    assert [e.seq for e in inbox.envelopes] == [1, 2, 3, 4]
    assert {e.publisher_id for e in inbox.envelopes} == {"flaky"}


async def test_max_payload_must_fit_a_frame(client_options: ClientConfig) -> None:
    options = dataclasses.replace(client_options, max_payload=5 << 20)
    with pytest.raises(ConfigError):
        BusClient(options, node_id="big")


async def test_batches_stay_within_frame_limit(client_options: ClientConfig) -> None:
    # Not started: batches are taken straight from the send queue.
    client = BusClient(client_options, node_id="pub")
    client.codec = FrameCodec(max_frame=300)
    small = [
        make_envelope("/cmd/local/0", seq=seq, payload=b"x" * 100)
        for seq in range(1, 4)
    ]
    oversize = make_envelope("/cmd/local/0", seq=4, payload=b"x" * 400)
    for envelope in [*small, oversize]:
        client.forward(envelope)

    assert client._take_batch() == small[:2]
    assert client._take_batch() == small[2:]
    assert client._take_batch() == []
    assert client.stats.dropped_local == 1
    assert not client.send_queue


async def test_max_payload_next_to_a_full_batch(
    broker: BrokerServer, client_options: ClientConfig, make_client: ClientFactory
) -> None:
    inbox = Inbox()
    subscriber = await make_client("sub")
    subscriber.subscribe("cmd", inbox)
    await wait_until(lambda: subscriptions(broker) == 1)

    max_payload = DEFAULT_MAX_FRAME - max_frame_for(0)
    options = dataclasses.replace(client_options, max_payload=max_payload)
    # Queued before connecting: both fall in one batch window.
    publisher = BusClient(options, node_id="pub")
    publisher.publish("/cmd/local/0", b"s" * (60 * 1024))
    publisher.publish("/cmd/local/0", b"b" * max_payload)
    async with publisher:
        await inbox.wait_for(2, timeout=10)
    assert [len(p) for p in inbox.payloads] == [60 * 1024, max_payload]
    assert publisher.stats.dropped_local == 0
