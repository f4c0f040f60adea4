import typing as t

import os
import socket

from .config_definitions import AnchorConfig
from .config_definitions import BenchConfig
from .config_definitions import BrokerConfig
from .config_definitions import ClientConfig
from .config_definitions import DemoConfig
from .config_definitions import Env
from .config_definitions import GatewayConfig
from .config_definitions import RecordsConfig


class config(AnchorConfig):
    env = Env(os.environ.get("ANCHOR_ENV", "development"))

    class broker(BrokerConfig):
        listen = os.environ.get("ANCHOR_LISTEN", "127.0.0.1:7450")
        queue_capacity = 4096
        batch_bytes_threshold = 64 * 1024
        max_residence_ms = 1.0
        tick_ms = 0.25
        heartbeat_interval_ms = 500.0
        heartbeat_timeout_ms = 1500.0
        max_frame = 4 << 20
        send_queue_frames = 256
        state_dir: t.Optional[str] = os.environ.get("ANCHOR_STATE_DIR")
        state_interval_ms = 500.0

    class client(ClientConfig):
        endpoint = os.environ.get("ANCHOR_ENDPOINT", "127.0.0.1:7450")
        node_id = os.environ.get("ANCHOR_NODE_ID", socket.gethostname().split(".")[0])
        send_capacity = 8192
        max_payload = 1 << 20
        heartbeat_interval_ms = 500.0
        heartbeat_timeout_ms = 1500.0
        register_timeout_ms = 1000.0
        backoff_base_ms = 100.0
        backoff_factor = 2.0
        backoff_cap_ms = 5000.0
        backoff_jitter = 0.2

    class gateway(GatewayConfig):
        gateway_id = "gateway"
        max_hops = 4
        dedupe_window = 65536
        links: dict = {}

    class records(RecordsConfig):
        region_path = os.environ.get("ANCHOR_REGION", "anchor.ancr")
        log_path: t.Optional[str] = None
        max_retries = 10_000
        flush_every = 1

    class demo(DemoConfig):
        log_dir = "demo-logs"
        window = 4
        tumbling = False
        features = 1
        source = "random_walk"
        seed = 7
        norm_low = 0.0
        norm_high = 1.0
        plant_initial = 0.0
        cycles = 20
        cycle_interval_ms = 100.0
        cycle_timeout_ms = 5000.0
        records_channel = "records"
        failure_schedule: list = []
        projects = {
            "alpha": {
                "model_id": "linear-stub",
                "threshold": 0.5,
                "gain": 0.5,
                "command_channel": "cmd",
                "status_channel": "status",
                "command_prio": 5,
                "status_prio": 3,
            }
        }

    class bench(BenchConfig):
        out_dir = "bench-results"
        warmup_fraction = 0.1
        warmup_min_s = 2.0
        bin_width_s = 0.5
        recovered_fraction = 0.9
        recovered_bins = 3
