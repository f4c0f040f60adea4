"""Result files of the bench harnesses. Formats are described in docs/bench.md."""
import typing as t

import csv
import os

from anchor_runtime.utils.options import json_serializer

from .latency import LatencyRun
from .recovery import ThroughputTrace


def _rate_label(rate: float) -> str:
    """
    >>> _rate_label(1000.0), _rate_label(2.5)
    ('1000', '2.5')
    """
    return f"{rate:g}"


def latency_stem(payload: int, rate: float) -> str:
    return f"latency_{payload}_{_rate_label(rate)}"


def latency_summary(run: LatencyRun) -> dict[str, t.Any]:
    p50 = p90 = p99 = None
    if (values := run.percentiles_us()) is not None:
        p50, p90, p99 = values
    return {
        "config": {
            "payload_bytes": run.payload_bytes,
            "target_rate": run.target_rate,
            "duration_s": run.duration_s,
            "warmup_s": run.warmup_s,
        },
        "n": int(run.samples.size),
        "p50_us": p50,
        "p90_us": p90,
        "p99_us": p99,
        "achieved_rate": run.achieved_rate,
        "valid": run.valid,
    }


def _write_json(path: str, body: t.Any) -> None:
    with open(path, "w") as f:
        f.write(json_serializer(body, indent=2, sort_keys=True))
        f.write("\n")


def write_latency(out_dir: str, run: LatencyRun) -> tuple[str, str]:
    """Write the samples CSV and the summary JSON of a run."""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, latency_stem(run.payload_bytes, run.target_rate))
    samples_path = stem + ".csv"
    with open(samples_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("seq", "latency_ns"))
        writer.writerows(zip(run.seqs.tolist(), run.samples.tolist()))
    summary_path = stem + ".json"
    _write_json(summary_path, latency_summary(run))
    return samples_path, summary_path


def write_trace(
    out_dir: str, trace: ThroughputTrace, config: t.Mapping[str, t.Any]
) -> tuple[str, str]:
    """Write the bins CSV and the trace JSON of a recovery run."""
    os.makedirs(out_dir, exist_ok=True)
    bins_path = os.path.join(out_dir, "recovery_bins.csv")
    with open(bins_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("bin_start_s", "count"))
        for i, count in enumerate(trace.bins):
            writer.writerow((f"{i * trace.bin_width_s:g}", count))
    trace_path = os.path.join(out_dir, "recovery.json")
    _write_json(
        trace_path,
        {
            "config": dict(config),
            "bins": trace.bins,
            "kill_ts": trace.kill_ts,
            "restart_ts": trace.restart_ts,
            "recovered_ts": trace.recovered_ts,
            "steady_mean": trace.steady_mean,
            "converged": trace.converged,
            "covers_downtime": trace.covers_downtime(),
        },
    )
    return bins_path, trace_path
