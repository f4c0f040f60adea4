import typing as t

import asyncio
import dataclasses
import itertools
import os
import tempfile
import time

import numpy as np

from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import AnchorConfig
from anchor_runtime.config_definitions import BenchConfig
from anchor_runtime.core import TopicAddress
from anchor_runtime.core.errors import RateUnachievable
from anchor_runtime.utils.log import getLogger

from .pacing import paced_publish
from .processes import BrokerProcess
from .processes import Deliveries
from .processes import SubscriberProcess
from .processes import wait_registered
from .stats import percentiles

logger = getLogger(__name__)

BENCH_CHANNEL = "bench"
PAYLOADS = (128, 1024)
RATES = (1000.0, 5000.0)
MIN_RATE_FRACTION = 0.95
#: Time left to the subscriber to drain in-flight messages.
DRAIN_S = 1.0


@dataclasses.dataclass
class LatencyRun:
    payload_bytes: int
    target_rate: float
    duration_s: float
    warmup_s: float
    #: Delivery latencies in ns, warmup excluded.
    samples: np.ndarray
    seqs: np.ndarray
    sent: int = 0
    achieved_rate: float = 0.0

    @property
    def valid(self) -> bool:
        return self.achieved_rate >= MIN_RATE_FRACTION * self.target_rate

    def check(self) -> None:
        if not self.valid:
            raise RateUnachievable(self.target_rate, self.achieved_rate)

    def percentiles_us(self) -> t.Optional[list[float]]:
        if self.samples.size == 0:
            return None
        return [value / 1000 for value in percentiles(self.samples)]


def warmup_duration(duration: float, options: BenchConfig) -> float:
    """
    >>> options = BenchConfig("out", 0.1, 2.0, 0.5, 0.9, 3)
    >>> warmup_duration(30.0, options), warmup_duration(60.0, options)
    (3.0, 6.0)
    >>> warmup_duration(5.0, options)
    2.0
    """
    return max(options.warmup_fraction * duration, options.warmup_min_s)


def grid(
    payloads: t.Iterable[int] = PAYLOADS, rates: t.Iterable[float] = RATES
) -> list[tuple[int, float]]:
    """Bench configurations, ordered by payload then rate.

    >>> grid()
    [(128, 1000.0), (128, 5000.0), (1024, 1000.0), (1024, 5000.0)]
    """
    return list(itertools.product(payloads, rates))


def measure(
    deliveries: Deliveries,
    *,
    start_ns: int,
    warmup_s: float,
    payload: int,
    rate: float,
    duration: float,
    elapsed: float,
    sent: int,
) -> LatencyRun:
    """Latencies of the messages published after the warmup."""
    kept = deliveries.sent_ns >= start_ns + int(warmup_s * 1e9)
    return LatencyRun(
        payload_bytes=payload,
        target_rate=rate,
        duration_s=duration,
        warmup_s=warmup_s,
        samples=deliveries.latency_ns[kept],
        seqs=deliveries.seq[kept],
        sent=sent,
        achieved_rate=sent / elapsed if elapsed > 0 else 0.0,
    )


async def run_latency(
    config: AnchorConfig,
    *,
    payload: int,
    rate: float,
    duration: float,
    endpoint: t.Optional[str] = None,
    config_path: t.Optional[str] = None,
    strict: bool = True,
) -> LatencyRun:
    """One publisher, one subscriber process, `rate` messages per second.

    Without `endpoint` a broker child is started on the configured listen
    address for the run. Latency is measured with the host monotonic clock,
    so every process must run on the same host.
    """
    broker: t.Optional[BrokerProcess] = None
    if endpoint is None:
        endpoint = config.broker.listen
        broker = BrokerProcess(endpoint, config_path=config_path)
        await broker.start()

    topic = TopicAddress(channel=BENCH_CHANNEL)
    body = bytes(payload)
    warmup_s = warmup_duration(duration, config.bench)
    with tempfile.TemporaryDirectory(prefix="anchor-bench-") as tmp:
        subscriber = SubscriberProcess(
            endpoint,
            channel=BENCH_CHANNEL,
            node_id=f"{config.client.node_id}-bench-sub",
            out=os.path.join(tmp, "deliveries.npz"),
            config_path=config_path,
        )
        publisher = BusClient(
            config.client, node_id=f"{config.client.node_id}-bench-pub", endpoint=endpoint
        )
        try:
            await subscriber.start()
            publisher.start()
            await wait_registered(publisher)
            start_ns = time.monotonic_ns()
            pacing = await paced_publish(
                publisher, topic, body, rate=rate, duration=duration
            )
            await publisher.close(drain_timeout=DRAIN_S)
            await asyncio.sleep(DRAIN_S)
            deliveries = await subscriber.stop()
        finally:
            await publisher.close()
            await subscriber.terminate()
            if broker is not None:
                await broker.stop()

    run = measure(
        deliveries,
        start_ns=start_ns,
        warmup_s=warmup_s,
        payload=payload,
        rate=rate,
        duration=duration,
        elapsed=pacing.elapsed_s,
        sent=pacing.sent,
    )
    logger.info(
        "Latency run finished",
        extra={
            "data": {
                "payload": payload,
                "rate": rate,
                "samples": int(run.samples.size),
                "achieved_rate": run.achieved_rate,
                "skipped": pacing.skipped,
            }
        },
    )
    if strict:
        run.check()
    return run
