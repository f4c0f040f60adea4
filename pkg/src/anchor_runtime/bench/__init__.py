from .latency import LatencyRun
from .latency import grid
from .latency import run_latency
from .pacing import PacingStats
from .pacing import paced_publish
from .processes import BrokerProcess
from .processes import Deliveries
from .processes import SubscriberProcess
from .processes import record_deliveries
from .recovery import ThroughputTrace
from .recovery import run_recovery
from .stats import ecdf
from .stats import percentiles
from .writers import write_latency
from .writers import write_trace

__all__ = (
    "BrokerProcess",
    "Deliveries",
    "LatencyRun",
    "PacingStats",
    "SubscriberProcess",
    "ThroughputTrace",
    "ecdf",
    "grid",
    "paced_publish",
    "percentiles",
    "record_deliveries",
    "run_latency",
    "run_recovery",
    "write_latency",
    "write_trace",
)
