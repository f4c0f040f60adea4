import typing as t

import asyncio
import dataclasses
import math
import time

from anchor_runtime.client import BusClient
from anchor_runtime.client import DroppedLocal
from anchor_runtime.core import TopicAddress

DEFAULT_TICK = 0.001


@dataclasses.dataclass
class PacingStats:
    sent: int = 0
    #: Send slots given up because the publisher fell more than a tick behind.
    skipped: int = 0
    #: Publishes refused by the client, which was closing.
    refused: int = 0
    elapsed_s: float = 0.0

    @property
    def rate(self) -> float:
        return self.sent / self.elapsed_s if self.elapsed_s > 0 else 0.0


def max_burst(rate: float, tick: float = DEFAULT_TICK) -> int:
    """Sends allowed at one wakeup: the slots falling within one tick."""
    return max(1, math.ceil(tick * rate))


def due_sends(
    elapsed: float, period: float, issued: int, burst: int
) -> tuple[int, int]:
    """Slots to send and to skip after `elapsed` seconds.

    Slot `i` is due at `i * period`. At most `burst` late slots are sent at
    once, older ones are skipped.

    >>> due_sends(0.0, 0.001, 0, 1)
    (1, 0)
    >>> due_sends(0.0105, 0.001, 1, 2)
    (2, 8)
    """
    backlog = math.floor(elapsed / period) + 1 - issued
    if backlog <= 0:
        return 0, 0
    send = min(backlog, burst)
    return send, backlog - send


async def paced_publish(
    client: BusClient,
    topic: TopicAddress,
    payload: bytes,
    *,
    rate: float,
    duration: float,
    tick: float = DEFAULT_TICK,
    clock: t.Callable[[], float] = time.monotonic,
) -> PacingStats:
    """Publish `payload` at `rate` messages per second for `duration` seconds.

    Open loop: message `i` is due at `start + i / rate` whatever the
    delivery times.
    """
    period = 1.0 / rate
    burst = max_burst(rate, tick)
    stats = PacingStats()
    start = clock()
    end = start + duration
    while (now := clock()) < end:
        send, skip = due_sends(now - start, period, stats.sent + stats.skipped, burst)
        stats.skipped += skip
        for _ in range(send):
            if isinstance(client.publish(topic, payload), DroppedLocal):
                stats.refused += 1
            stats.sent += 1
        next_due = start + (stats.sent + stats.skipped) * period
        await asyncio.sleep(max(0.0, min(next_due, end) - clock()))
    stats.elapsed_s = clock() - start
    return stats
