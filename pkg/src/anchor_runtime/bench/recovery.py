"""Crash and restart the broker under load and trace delivered throughput."""
import typing as t

import asyncio
import dataclasses
import os
import tempfile
import time

import numpy as np

from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import AnchorConfig
from anchor_runtime.config_definitions import BenchConfig
from anchor_runtime.core import TopicAddress
from anchor_runtime.utils.asyncutils import cancel_task
from anchor_runtime.utils.log import getLogger

from .latency import BENCH_CHANNEL
from .pacing import paced_publish
from .processes import BrokerProcess
from .processes import SubscriberProcess
from .processes import wait_registered

logger = getLogger(__name__)

#: Publishing continues this long after the broker restart.
DEFAULT_SETTLE_S = 10.0
DRAIN_S = 1.0


@dataclasses.dataclass
class ThroughputTrace:
    bin_width_s: float
    bins: list[int]
    #: Marks, in seconds since the start of publishing.
    kill_ts: float
    restart_ts: float
    recovered_ts: t.Optional[float]
    steady_mean: float
    #: The subscriber's subscriptions were found again on the new broker.
    converged: bool = False

    def zero_intervals(self) -> list[tuple[float, float]]:
        return zero_intervals(self.bins, self.bin_width_s)

    def covers_downtime(self) -> bool:
        """A single run of empty bins spans the whole downtime."""
        intervals = self.zero_intervals()
        if len(intervals) != 1:
            return False
        start, end = intervals[0]
        return (
            start <= self.kill_ts + self.bin_width_s
            and end >= self.restart_ts - self.bin_width_s
        )


def bin_counts(
    received_ns: np.ndarray, *, start_ns: int, bin_width: float, n_bins: int
) -> list[int]:
    """Deliveries per bin of `bin_width` seconds from `start_ns`.

    >>> bin_counts(np.array([0, 10, 600_000_000]), start_ns=0, bin_width=0.5, n_bins=3)
    [2, 1, 0]
    """
    offsets = (received_ns - start_ns) / 1e9
    index = np.floor(offsets / bin_width).astype(np.int64)
    index = index[(index >= 0) & (index < n_bins)]
    return np.bincount(index, minlength=n_bins).tolist()


def steady_mean(bins: t.Sequence[int], *, kill_ts: float, bin_width: float) -> float:
    """Mean of the whole bins before the kill, the first one left out."""
    before = int(kill_ts // bin_width)
    window = bins[1:before] if before > 2 else bins[:before]
    return float(np.mean(window)) if len(window) else 0.0


def recovered_at(
    bins: t.Sequence[int],
    *,
    restart_ts: float,
    bin_width: float,
    steady: float,
    fraction: float = 0.9,
    sustain: int = 3,
) -> t.Optional[float]:
    """Start of the first bin from the restart on that opens `sustain` bins
    all at `fraction` of the steady throughput or more.

    >>> recovered_at([5, 0, 0, 5, 5, 5, 4], restart_ts=1.0, bin_width=1.0, steady=5.0)
    3.0
    >>> recovered_at([5, 0, 5, 5], restart_ts=1.0, bin_width=1.0, steady=5.0) is None
    True
    """
    threshold = fraction * steady
    for i in range(int(restart_ts // bin_width), len(bins) - sustain + 1):
        if all(count >= threshold for count in bins[i : i + sustain]):
            return i * bin_width
    return None


def zero_intervals(
    bins: t.Sequence[int], bin_width: float
) -> list[tuple[float, float]]:
    """Spans of consecutive empty bins, as (start, end) seconds.

    >>> zero_intervals([3, 0, 0, 2, 0], 0.5)
    [(0.5, 1.5), (2.0, 2.5)]
    """
    intervals = []
    start: t.Optional[int] = None
    for i, count in enumerate([*bins, 1]):
        if count == 0 and start is None:
            start = i
        elif count != 0 and start is not None:
            intervals.append((start * bin_width, i * bin_width))
            start = None
    return intervals


def build_trace(
    received_ns: np.ndarray,
    *,
    start_ns: int,
    elapsed: float,
    kill_ts: float,
    restart_ts: float,
    options: BenchConfig,
    converged: bool,
) -> ThroughputTrace:
    width = options.bin_width_s
    bins = bin_counts(
        received_ns, start_ns=start_ns, bin_width=width, n_bins=int(elapsed // width)
    )
    steady = steady_mean(bins, kill_ts=kill_ts, bin_width=width)
    return ThroughputTrace(
        bin_width_s=width,
        bins=bins,
        kill_ts=kill_ts,
        restart_ts=restart_ts,
        recovered_ts=recovered_at(
            bins,
            restart_ts=restart_ts,
            bin_width=width,
            steady=steady,
            fraction=options.recovered_fraction,
            sustain=options.recovered_bins,
        ),
        steady_mean=steady,
        converged=converged,
    )


async def subscriptions_converged(
    client: BusClient, *, node_id: str, channel: str, timeout: float
) -> bool:
    """Poll broker stats until `node_id` holds a subscription to `channel`."""
    deadline = time.monotonic() + timeout
    while (remaining := deadline - time.monotonic()) > 0:
        try:
            stats = await client.request_stats(timeout=remaining)
        except asyncio.TimeoutError:
            return False
        for node in stats.get("nodes", []):
            if node["node_id"] == node_id and any(
                s["channel"] == channel for s in node["subscriptions"]
            ):
                return True
        await asyncio.sleep(0.1)
    return False


async def run_recovery(
    config: AnchorConfig,
    *,
    rate: float,
    payload: int,
    kill_after_s: float,
    downtime_s: float,
    settle_s: float = DEFAULT_SETTLE_S,
    listen: t.Optional[str] = None,
    config_path: t.Optional[str] = None,
) -> ThroughputTrace:
    """Publish at `rate`, SIGKILL the broker after `kill_after_s` and respawn
    it cold `downtime_s` later.

    The broker state directory is deleted with the process. Clients are
    left to their own recovery.
    """
    listen = listen or config.broker.listen
    audit_timeout = config.client.backoff_cap_ms / 1000 + 2.0
    node_id = f"{config.client.node_id}-bench-sub"
    topic = TopicAddress(channel=BENCH_CHANNEL)

    with tempfile.TemporaryDirectory(prefix="anchor-recovery-") as tmp:
        broker = BrokerProcess(
            listen, state_dir=os.path.join(tmp, "state"), config_path=config_path
        )
        subscriber = SubscriberProcess(
            listen,
            channel=BENCH_CHANNEL,
            node_id=node_id,
            out=os.path.join(tmp, "deliveries.npz"),
            config_path=config_path,
        )
        publisher = BusClient(
            config.client, node_id=f"{config.client.node_id}-bench-pub", endpoint=listen
        )
        publishing: t.Optional[asyncio.Task] = None
        try:
            await broker.start()
            await subscriber.start()
            publisher.start()
            await wait_registered(publisher)

            start_ns = time.monotonic_ns()
            start = start_ns / 1e9
            publishing = asyncio.create_task(
                paced_publish(
                    publisher,
                    topic,
                    bytes(payload),
                    rate=rate,
                    duration=kill_after_s + downtime_s + settle_s,
                )
            )
            await asyncio.sleep(max(0.0, start + kill_after_s - time.monotonic()))
            await broker.kill()
            kill_ts = time.monotonic() - start

            await asyncio.sleep(
                max(0.0, start + kill_after_s + downtime_s - time.monotonic())
            )
            restart_ts = time.monotonic() - start
            await broker.start()

            pacing = await publishing
            converged = await subscriptions_converged(
                publisher, node_id=node_id, channel=BENCH_CHANNEL, timeout=audit_timeout
            )
            await asyncio.sleep(DRAIN_S)
            deliveries = await subscriber.stop()
        finally:
            await cancel_task(publishing)
            await publisher.close()
            await subscriber.terminate()
            await broker.stop()

    trace = build_trace(
        deliveries.received_ns,
        start_ns=start_ns,
        elapsed=pacing.elapsed_s,
        kill_ts=kill_ts,
        restart_ts=restart_ts,
        options=config.bench,
        converged=converged,
    )
    logger.info(
        "Recovery run finished",
        extra={
            "data": {
                "kill_ts": trace.kill_ts,
                "restart_ts": trace.restart_ts,
                "recovered_ts": trace.recovered_ts,
                "steady_mean": trace.steady_mean,
                "converged": trace.converged,
            }
        },
    )
    return trace
