import typing as t

import pytest
from pytest_mock import MockerFixture

from anchor_runtime.bench import paced_publish
from anchor_runtime.bench.pacing import due_sends
from anchor_runtime.bench.pacing import max_burst
from anchor_runtime.client import Accepted
from anchor_runtime.client import DroppedLocal
from anchor_runtime.core import TopicAddress

# Binary fractions keep the simulated clock exact.
RATE = 1024.0
PERIOD = 1 / RATE


class FakeClient:
    def __init__(self, *, refuse_after: t.Optional[int] = None) -> None:
        self.published: list[tuple[TopicAddress, bytes]] = []
        self.refuse_after = refuse_after

    def publish(
        self, topic: TopicAddress, payload: bytes
    ) -> t.Union[Accepted, DroppedLocal]:
        if self.refuse_after is not None and len(self.published) >= self.refuse_after:
            return DroppedLocal("closed")
        self.published.append((topic, payload))
        return Accepted(seq=len(self.published))


class SimulatedTime:
    """Clock advanced by the patched sleep, `lag` seconds late each time."""

    def __init__(self, lag: float = 0.0) -> None:
        self.now = 0.0
        self.lag = lag
        self.sleeps = 0

    def __call__(self) -> float:
        return self.now

    async def sleep(self, delay: float) -> None:
        self.sleeps += 1
        self.now += max(delay, 0.0) + self.lag


@pytest.fixture
def simulated(mocker: MockerFixture) -> t.Callable[..., SimulatedTime]:
    def factory(lag: float = 0.0) -> SimulatedTime:
        clock = SimulatedTime(lag)
        mocker.patch("anchor_runtime.bench.pacing.asyncio.sleep", clock.sleep)
        return clock

    return factory


def test_due_sends() -> None:
    assert due_sends(0.0, PERIOD, 0, 1) == (1, 0)
    assert due_sends(0.5 * PERIOD, PERIOD, 1, 1) == (0, 0)
    assert due_sends(3 * PERIOD, PERIOD, 2, 4) == (2, 0)
    assert due_sends(20 * PERIOD, PERIOD, 1, 4) == (4, 16)


def test_max_burst() -> None:
    assert max_burst(100.0) == 1
    assert max_burst(1000.0) == 1
    assert max_burst(1500.0) == 2
    assert max_burst(50_000.0) == 50


async def test_paced_publish_on_time(simulated: t.Callable[..., SimulatedTime]) -> None:
    clock = simulated()
    client = FakeClient()
    topic = TopicAddress(channel="bench")
    stats = await paced_publish(
        client,  # type: ignore[arg-type]
        topic,
        b"x",
        rate=RATE,
        duration=128 * PERIOD,
        clock=clock,
    )
    assert (stats.sent, stats.skipped, stats.refused) == (128, 0, 0)
    assert stats.elapsed_s == 128 * PERIOD
    assert stats.rate == RATE
    assert client.published[0] == (topic, b"x")


async def test_paced_publish_skips_when_late(
    simulated: t.Callable[..., SimulatedTime],
) -> None:
    clock = simulated(lag=10 * PERIOD)
    client = FakeClient()
    stats = await paced_publish(
        client,  # type: ignore[arg-type]
        TopicAddress(channel="bench"),
        b"",
        rate=RATE,
        duration=128 * PERIOD,
        clock=clock,
    )
    # Wakeups land 10 slots late: 2 sends (one tick's burst), 9 skipped.
    assert (stats.sent, stats.skipped) == (23, 99)
    assert len(client.published) == stats.sent
    assert stats.rate < RATE / 4


async def test_paced_publish_counts_refused(
    simulated: t.Callable[..., SimulatedTime],
) -> None:
    clock = simulated()
    stats = await paced_publish(
        FakeClient(refuse_after=10),  # type: ignore[arg-type]
        TopicAddress(channel="bench"),
        b"",
        rate=RATE,
        duration=32 * PERIOD,
        clock=clock,
    )
    assert (stats.sent, stats.refused) == (32, 22)
