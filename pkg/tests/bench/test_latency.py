import typing as t

import csv
import json
import os

import numpy as np
import pytest

from anchor_runtime.bench import Deliveries
from anchor_runtime.bench import LatencyRun
from anchor_runtime.bench import ThroughputTrace
from anchor_runtime.bench import write_latency
from anchor_runtime.bench import write_trace
from anchor_runtime.bench.latency import measure
from anchor_runtime.bench.latency import warmup_duration
from anchor_runtime.config import AnchorConfig
from anchor_runtime.core.errors import RateUnachievable

SECOND = 1_000_000_000


def make_run(samples: list[int], *, achieved: float = 1000.0) -> LatencyRun:
    return LatencyRun(
        payload_bytes=128,
        target_rate=1000.0,
        duration_s=5.0,
        warmup_s=2.0,
        samples=np.array(samples, dtype=np.int64),
        seqs=np.arange(1, len(samples) + 1, dtype=np.int64),
        sent=5000,
        achieved_rate=achieved,
    )


def test_measure_drops_warmup() -> None:
    start_ns = 100 * SECOND
    sent_ns = start_ns + np.arange(10, dtype=np.int64) * SECOND // 2
    deliveries = Deliveries(
        seq=np.arange(1, 11, dtype=np.int64),
        sent_ns=sent_ns,
        received_ns=sent_ns + np.arange(10, dtype=np.int64) * 1000,
    )
    run = measure(
        deliveries,
        start_ns=start_ns,
        warmup_s=2.0,
        payload=128,
        rate=2.0,
        duration=5.0,
        elapsed=5.0,
        sent=10,
    )
    # Messages sent at 2.0 s and later are kept.
    assert run.seqs.tolist() == [5, 6, 7, 8, 9, 10]
    assert run.samples.tolist() == [4000, 5000, 6000, 7000, 8000, 9000]
    assert run.achieved_rate == 2.0
    assert run.valid
    assert run.percentiles_us() == [6.0, 9.0, 9.0]


def test_warmup_duration(anchor_config: AnchorConfig) -> None:
    # The test configuration has no minimum warmup.
    assert warmup_duration(30.0, anchor_config.bench) == 3.0
    assert warmup_duration(0.5, anchor_config.bench) == 0.05


def test_rate_check() -> None:
    make_run([1], achieved=950.0).check()
    run = make_run([1], achieved=949.0)
    assert not run.valid
    with pytest.raises(RateUnachievable) as exc_info:
        run.check()
    assert exc_info.value.achieved_rate == 949.0


def test_write_latency(tmp_path: t.Any) -> None:
    out = os.path.join(tmp_path, "results")
    run = make_run(list(range(1000, 11000, 1000)))
    samples_path, summary_path = write_latency(out, run)
    assert os.path.basename(samples_path) == "latency_128_1000.csv"

    with open(samples_path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["seq", "latency_ns"]
    assert rows[1:3] == [["1", "1000"], ["2", "2000"]]
    assert len(rows) == 11

    with open(summary_path) as f:
        summary = json.load(f)
    assert summary == {
        "config": {
            "payload_bytes": 128,
            "target_rate": 1000.0,
            "duration_s": 5.0,
            "warmup_s": 2.0,
        },
        "n": 10,
        "p50_us": 5.0,
        "p90_us": 9.0,
        "p99_us": 10.0,
        "achieved_rate": 1000.0,
        "valid": True,
    }


def test_write_latency_without_samples(tmp_path: t.Any) -> None:
    _, summary_path = write_latency(str(tmp_path), make_run([], achieved=10.0))
    with open(summary_path) as f:
        summary = json.load(f)
    assert (summary["n"], summary["p50_us"], summary["valid"]) == (0, None, False)


def test_write_trace(tmp_path: t.Any) -> None:
    trace = ThroughputTrace(
        bin_width_s=0.5,
        bins=[3, 0, 2],
        kill_ts=0.4,
        restart_ts=0.9,
        recovered_ts=1.0,
        steady_mean=3.0,
        converged=True,
    )
    bins_path, trace_path = write_trace(str(tmp_path), trace, {"rate": 10.0})
    with open(bins_path, newline="") as f:
        assert list(csv.reader(f)) == [
            ["bin_start_s", "count"],
            ["0", "3"],
            ["0.5", "0"],
            ["1", "2"],
        ]
    with open(trace_path) as f:
        body = json.load(f)
    assert body["config"] == {"rate": 10.0}
    assert body["bins"] == [3, 0, 2]
    assert body["recovered_ts"] == 1.0
    assert body["converged"] is True
    assert body["covers_downtime"] is True
