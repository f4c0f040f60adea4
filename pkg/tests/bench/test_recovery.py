import numpy as np
import pytest

from anchor_runtime.bench import ThroughputTrace
from anchor_runtime.bench.recovery import bin_counts
from anchor_runtime.bench.recovery import build_trace
from anchor_runtime.bench.recovery import recovered_at
from anchor_runtime.bench.recovery import steady_mean
from anchor_runtime.config import AnchorConfig

SECOND = 1_000_000_000


def deliveries(rate_per_bin: list[int], width: float, start_ns: int) -> np.ndarray:
    """Evenly spread delivery stamps producing the given bin counts."""
    stamps = []
    for i, count in enumerate(rate_per_bin):
        for k in range(count):
            offset = (i + (k + 0.5) / count) * width
            stamps.append(start_ns + int(offset * SECOND))
    return np.array(stamps, dtype=np.int64)


def test_bin_counts_matches_brute_force() -> None:
    rng = np.random.default_rng(3)
    start_ns = 5 * SECOND
    received = start_ns + rng.integers(-SECOND, 11 * SECOND, size=2000)
    bins = bin_counts(received, start_ns=start_ns, bin_width=0.5, n_bins=20)

    expected = [0] * 20
    for stamp in received.tolist():
        offset = (stamp - start_ns) / 1e9
        if 0 <= offset < 10:
            expected[int(offset // 0.5)] += 1
    assert bins == expected


def test_steady_mean_skips_first_bin() -> None:
    bins = [1, 10, 10, 12, 0, 0]
    assert steady_mean(bins, kill_ts=2.0, bin_width=0.5) == 32 / 3
    # Too few bins to leave the first one out.
    assert steady_mean(bins, kill_ts=1.0, bin_width=0.5) == 5.5
    assert steady_mean(bins, kill_ts=0.2, bin_width=0.5) == 0.0


def test_recovered_at() -> None:
    bins = [10, 10, 10, 0, 0, 9, 3, 9, 10, 9, 10]
    assert recovered_at(bins, restart_ts=3.0, bin_width=1.0, steady=10.0) == 7.0
    assert (
        recovered_at(bins, restart_ts=3.0, bin_width=1.0, steady=10.0, sustain=1)
        == 5.0
    )
    assert (
        recovered_at(bins, restart_ts=3.0, bin_width=1.0, steady=10.0, fraction=1.0)
        is None
    )


def test_build_trace(anchor_config: AnchorConfig) -> None:
    options = anchor_config.bench
    width = options.bin_width_s
    counts = [20] * 8 + [0] * 6 + [5] + [20] * 5
    start_ns = 42 * SECOND
    received = deliveries(counts, width, start_ns)

    trace = build_trace(
        received,
        start_ns=start_ns,
        elapsed=len(counts) * width,
        kill_ts=8 * width,
        restart_ts=14 * width,
        options=options,
        converged=True,
    )
    assert trace.bins == counts
    assert trace.steady_mean == 20.0
    assert trace.recovered_ts == 15 * width
    assert trace.zero_intervals() == [(8 * width, 14 * width)]
    assert trace.covers_downtime()


@pytest.mark.parametrize(
    "bins,covers",
    [
        ([4, 4, 0, 0, 0, 4], True),
        ([4, 4, 0, 4, 0, 4], False),
        ([4, 4, 4, 4, 4, 4], False),
        ([4, 4, 4, 4, 0, 4], False),
    ],
)
def test_covers_downtime(bins: list[int], covers: bool) -> None:
    trace = ThroughputTrace(
        bin_width_s=1.0,
        bins=bins,
        kill_ts=2.2,
        restart_ts=4.6,
        recovered_ts=None,
        steady_mean=4.0,
    )
    assert trace.covers_downtime() is covers
