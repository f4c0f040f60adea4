import typing as t

import dataclasses
from enum import Enum


class Env(Enum):
    DEVELOPMENT = "development"
    TEST = "test"
    PRODUCTION = "production"


@dataclasses.dataclass
class BrokerConfig:
    # "host:port" the broker listens on.
    listen: str
    # Per-priority queue capacity, per session.
    queue_capacity: int
    batch_bytes_threshold: int
    max_residence_ms: float
    # Period of the flush driver. Must stay below max_residence_ms.
    tick_ms: float
    heartbeat_interval_ms: float
    heartbeat_timeout_ms: float
    max_frame: int
    # Data frames buffered per session before the broker holds them queued.
    send_queue_frames: int
    # If set, the broker mirrors its counters in `<state_dir>/broker.ancr`.
    state_dir: t.Optional[str]
    state_interval_ms: float


@dataclasses.dataclass
class ClientConfig:
    endpoint: str
    node_id: str
    send_capacity: int
    max_payload: int
    heartbeat_interval_ms: float
    heartbeat_timeout_ms: float
    register_timeout_ms: float
    backoff_base_ms: float
    backoff_factor: float
    backoff_cap_ms: float
    backoff_jitter: float


@dataclasses.dataclass
class LinkConfig:
    # Endpoints of the brokers of both clusters.
    source: str
    target: str
    source_cluster: str
    target_cluster: str
    bidirectional: bool = True


@dataclasses.dataclass
class GatewayConfig:
    gateway_id: str
    max_hops: int
    dedupe_window: int
    links: dict[str, LinkConfig]


@dataclasses.dataclass
class RecordsConfig:
    region_path: str
    log_path: t.Optional[str]
    # Read attempts before a reader gives up with ContendedTimeout.
    max_retries: int
    # Flush the replay log every N appends.
    flush_every: int


@dataclasses.dataclass
class ProjectConfig:
    model_id: str
    threshold: float
    gain: float
    command_channel: str
    status_channel: str
    command_prio: int
    status_prio: int


@dataclasses.dataclass
class DemoConfig:
    log_dir: str
    # Observation window size and mode.
    window: int
    tumbling: bool
    features: int
    # "random_walk" or "plant".
    source: str
    seed: int
    norm_low: float
    norm_high: float
    plant_initial: float
    cycles: int
    cycle_interval_ms: float
    cycle_timeout_ms: float
    records_channel: str
    # Cycles at which the plant reports a failure.
    failure_schedule: list[int]
    projects: dict[str, ProjectConfig]


@dataclasses.dataclass
class BenchConfig:
    out_dir: str
    warmup_fraction: float
    warmup_min_s: float
    bin_width_s: float
    recovered_fraction: float
    recovered_bins: int


@dataclasses.dataclass
class AnchorConfig:
    env: Env
    broker: BrokerConfig
    client: ClientConfig
    gateway: GatewayConfig
    records: RecordsConfig
    demo: DemoConfig
    bench: BenchConfig
