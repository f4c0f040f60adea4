import typing as t

import asyncio
import contextlib
import dataclasses
import math
import random
from collections import deque
from collections.abc import Iterable
from collections.abc import Iterator

import numpy as np

from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.errors import DemoError
from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.records import RegionHandle
from anchor_runtime.utils.log import getLogger

from . import layout
from .channels import Channels
from .messages import FeedbackApplied
from .messages import ReadyCheck
from .messages import RecordsUpdated
from .messages import RoleReady
from .messages import decode
from .messages import encode

# Observations pulled for one cycle before giving up on a source.
MAX_PULLS_PER_WINDOW = 16
READY_CHECK_INTERVAL = 0.1
REQUIRED_ROLES = frozenset({"inference", "executor", "materializer"})


class Aggregates(t.NamedTuple):
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray
    count: int


def aggregate(window: t.Sequence[np.ndarray]) -> Aggregates:
    stacked = np.stack(window)
    return Aggregates(
        mean=stacked.mean(axis=0),
        min=stacked.min(axis=0),
        max=stacked.max(axis=0),
        count=len(window),
    )


class WindowState:
    """Window buffer of normalized feature vectors.

    Sliding windows evict the oldest vector once full, tumbling windows start
    over. After `push` the buffer holds exactly the vectors of the last
    aggregate returned.
    """

    def __init__(self, capacity: int, features: int, *, tumbling: bool = False):
        if capacity < 1:
            raise ConfigError("Window size must be at least 1")
        self.capacity = capacity
        self.features = features
        self.tumbling = tumbling
        self.buffer: deque[np.ndarray] = deque()
        self.aggregates: t.Optional[Aggregates] = None

    def push(self, vector: np.ndarray) -> t.Optional[Aggregates]:
        if len(self.buffer) == self.capacity:
            if self.tumbling:
                self.buffer.clear()
            else:
                self.buffer.popleft()
        self.buffer.append(vector)
        if len(self.buffer) < self.capacity:
            return None
        self.aggregates = aggregate(self.buffer)
        return self.aggregates


@dataclasses.dataclass(frozen=True)
class Normalizer:
    """Affine map of `[low, high]` onto `[0, 1]`, clamping readings outside it.

    The default bounds leave values untouched.
    """

    low: float = 0.0
    high: float = 1.0

    def __post_init__(self) -> None:
        if not self.high > self.low:
            raise ConfigError("Normalization bounds must satisfy low < high")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.low == 0.0 and self.high == 1.0:
            return values
        return np.clip((values - self.low) / (self.high - self.low), 0.0, 1.0)


def parse_observation(raw: str, features: int) -> np.ndarray:
    """
    >>> parse_observation("0.5,1.25", 2)
    array([0.5 , 1.25])
    """
    try:
        values = np.array([float(v) for v in raw.split(",")], dtype=np.float64)
    except ValueError as e:
        raise ProtocolError(f"Malformed observation {raw!r}") from e
    if values.shape != (features,):
        raise ProtocolError(f"Expected {features} features in {raw!r}")
    return values


def format_observation(values: Iterable[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


@dataclasses.dataclass
class PreprocessStats:
    accepted: int = 0
    malformed: int = 0
    rejected: int = 0
    writes: int = 0


class Preprocessor:
    """Parse, clean and normalize observations into a window."""

    def __init__(
        self,
        window: WindowState,
        normalizer: t.Optional[Normalizer] = None,
    ) -> None:
        self.window = window
        self.normalizer = normalizer or Normalizer()
        self.stats = PreprocessStats()

    def feed(self, raw: str) -> t.Optional[Aggregates]:
        try:
            values = parse_observation(raw, self.window.features)
        except ProtocolError:
            self.stats.malformed += 1
            return None
        if not np.all(np.isfinite(values)):
            self.stats.rejected += 1
            return None
        self.stats.accepted += 1
        aggregates = self.window.push(self.normalizer(values))
        if aggregates is not None:
            self.stats.writes += 1
        return aggregates


def preprocess(
    observations: Iterable[str],
    window: int,
    *,
    features: int = 1,
    tumbling: bool = False,
    normalizer: t.Optional[Normalizer] = None,
) -> Iterator[Aggregates]:
    """Aggregates written for each full window of the observation stream.

    >>> [a.mean.tolist() for a in preprocess(["1", "2", "3", "4"], 3)]
    [[2.0], [3.0]]
    """
    preprocessor = Preprocessor(
        WindowState(window, features, tumbling=tumbling), normalizer
    )
    for raw in observations:
        aggregates = preprocessor.feed(raw)
        if aggregates is not None:
            yield aggregates


class ObservationSource(t.Protocol):
    def next(self) -> str:
        ...


class RandomWalkSource:
    """Seeded random walk reflected within the normalization bounds."""

    def __init__(
        self, *, seed: int, features: int, low: float = 0.0, high: float = 1.0
    ) -> None:
        self.rng = random.Random(seed)  # noqa: S311
        self.low = low
        self.high = high
        self.step = (high - low) / 20
        self.values = [(low + high) / 2] * features

    def next(self) -> str:
        for i, value in enumerate(self.values):
            value += self.rng.gauss(0.0, self.step)
            if value > self.high:
                value = 2 * self.high - value
            if value < self.low:
                value = 2 * self.low - value
            self.values[i] = value
        return format_observation(self.values)


class PlantSensorSource:
    """Observe the materialized plant value of a project."""

    def __init__(
        self,
        region: RegionHandle,
        *,
        project_id: str,
        features: int,
        initial: float,
    ) -> None:
        self.region = region
        self.project_id = project_id
        self.features = features
        self.initial = initial

    def next(self) -> str:
        value, _ = layout.feedback_value(self.region, self.project_id, self.initial)
        return format_observation([value] * self.features)


def make_source(options: DemoConfig, region: RegionHandle) -> ObservationSource:
    if options.source == "random_walk":
        return RandomWalkSource(
            seed=options.seed,
            features=options.features,
            low=options.norm_low,
            high=options.norm_high,
        )
    if options.source == "plant":
        if not options.projects:
            raise ConfigError("The plant source needs at least one project")
        return PlantSensorSource(
            region,
            project_id=sorted(options.projects)[0],
            features=options.features,
            initial=options.plant_initial,
        )
    raise ConfigError(f"Unknown observation source: {options.source!r}")


@dataclasses.dataclass
class ProducerReport:
    cycles: int = 0
    stalled: list[int] = dataclasses.field(default_factory=list)
    preprocess: PreprocessStats = dataclasses.field(default_factory=PreprocessStats)


class Producer:
    """Write window aggregates, one cycle at a time.

    A cycle starts once the previous one was materialized for every project,
    or after `cycle_timeout`, and never earlier than `cycle_interval` after
    the previous start.
    """

    def __init__(
        self,
        options: DemoConfig,
        *,
        region: RegionHandle,
        client: BusClient,
        source: t.Optional[ObservationSource] = None,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.region = region
        self.client = client
        self.channels = Channels.from_options(options)
        self.source = source or make_source(options, region)
        self.preprocessor = Preprocessor(
            WindowState(options.window, options.features, tumbling=options.tumbling),
            Normalizer(options.norm_low, options.norm_high),
        )
        self.report = ProducerReport(preprocess=self.preprocessor.stats)
        self.ready: set[str] = set()
        self._ready_event = asyncio.Event()
        self._cycle = 0
        self._pending: set[str] = set()
        self._cycle_done = asyncio.Event()

    def start(self) -> None:
        self.client.subscribe(self.channels.applied, self.on_feedback_applied)
        self.client.subscribe(self.channels.control, self.on_control)
        self.client.start()

    def on_control(self, envelope: MessageEnvelope) -> None:
        try:
            ready = decode(envelope.payload, RoleReady)
        except ProtocolError:
            return
        self.ready.add(ready.role)
        if REQUIRED_ROLES <= self.ready:
            self._ready_event.set()

    def on_feedback_applied(self, envelope: MessageEnvelope) -> None:
        applied = decode(envelope.payload, FeedbackApplied)
        if applied.cycle != self._cycle:
            return
        self._pending.discard(applied.project_id)
        if not self._pending:
            self._cycle_done.set()

    async def wait_roles(self, timeout: float) -> None:
        """Poll the other roles until all of them answered."""
        loop = asyncio.get_running_loop()
        deadline = loop.time() + timeout
        while not self._ready_event.is_set():
            if loop.time() > deadline:
                missing = sorted(REQUIRED_ROLES - self.ready)
                raise DemoError(f"Roles did not answer: {missing}")
            if self.client.is_registered:
                self.client.publish(
                    self.channels.control_topic, encode(ReadyCheck(self.client.node_id))
                )
            with contextlib.suppress(asyncio.TimeoutError):
                await asyncio.wait_for(self._ready_event.wait(), READY_CHECK_INTERVAL)

    def observe(self) -> Aggregates:
        for _ in range(MAX_PULLS_PER_WINDOW * self.options.window):
            aggregates = self.preprocessor.feed(self.source.next())
            if aggregates is not None:
                return aggregates
        raise DemoError("Observation source produced no usable window")

    def write(self, cycle: int, aggregates: Aggregates) -> int:
        return self.region.write_groups(
            {
                layout.AGG_MEAN: aggregates.mean,
                layout.AGG_MIN: aggregates.min,
                layout.AGG_MAX: aggregates.max,
                layout.AGG_COUNT: [aggregates.count],
                layout.AGG_CYCLE: [cycle],
            }
        )

    async def run_cycle(self, cycle: int) -> bool:
        """Run one cycle. Returns False when the cycle stalled."""
        self._cycle = cycle
        self._pending = set(self.options.projects)
        self._cycle_done.clear()

        version = self.write(cycle, self.observe())
        self.client.publish(
            self.channels.records_topic,
            encode(RecordsUpdated(cycle=cycle, version_counter=version)),
        )
        if not self._pending:
            return True
        try:
            await asyncio.wait_for(
                self._cycle_done.wait(), self.options.cycle_timeout_ms / 1000
            )
        except asyncio.TimeoutError:
            self.logger.warning(
                "Cycle stalled",
                extra={"data": {"cycle": cycle, "pending": sorted(self._pending)}},
            )
            self.report.stalled.append(cycle)
            return False
        return True

    async def run(self, *, ready_timeout: float = 30.0) -> ProducerReport:
        loop = asyncio.get_running_loop()
        await self.client.wait_registered(ready_timeout)
        await self.wait_roles(ready_timeout)
        interval = self.options.cycle_interval_ms / 1000
        for cycle in range(1, self.options.cycles + 1):
            started = loop.time()
            await self.run_cycle(cycle)
            self.report.cycles = cycle
            await asyncio.sleep(max(0.0, started + interval - loop.time()))
        self.logger.info(
            "Producer finished",
            extra={"data": dataclasses.asdict(self.report)},
        )
        return self.report


def expected_convergence_cycles(x0: float, threshold: float, gain: float) -> int:
    """Cycles for a linear plant to come within 1e-9 of its threshold.

    >>> expected_convergence_cycles(0.0, 0.5, 0.5)
    29
    """
    distance = abs(x0 - threshold)
    if distance <= 1e-9:
        return 0
    return math.ceil(math.log(1e-9 / distance) / math.log(1 - gain))
