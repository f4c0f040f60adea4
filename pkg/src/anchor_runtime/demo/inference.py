import time

from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.config_definitions import ProjectConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.errors import StaleSnapshot
from anchor_runtime.records import RegionHandle
from anchor_runtime.records import Snapshot
from anchor_runtime.utils.log import getLogger

from . import layout
from .channels import Channels
from .channels import command_topic
from .messages import CommandAction
from .messages import CommandMsg
from .messages import RecordsUpdated
from .messages import decode
from .messages import encode
from .roles import answer_ready_checks


def policy(
    observed: float, threshold: float, gain: float
) -> tuple[CommandAction, float]:
    """Linear stub policy driving the observed value toward `threshold`.

    >>> policy(0.5, 0.5, 2.0)
    (<CommandAction.HOLD: 'hold'>, 0.0)
    >>> policy(0.25, 0.5, 2.0)
    (<CommandAction.INCREASE: 'increase'>, 0.5)
    """
    if observed > threshold:
        return CommandAction.DECREASE, gain * (observed - threshold)
    if observed < threshold:
        return CommandAction.INCREASE, gain * (threshold - observed)
    return CommandAction.HOLD, 0.0


def observed_value(snapshot: Snapshot) -> float:
    """Mean of the aggregated window.

    Raises `StaleSnapshot` while no window was aggregated yet.
    """
    if int(snapshot[layout.AGG_COUNT][0]) == 0:
        raise StaleSnapshot(f"No aggregate in snapshot {snapshot.version_counter}")
    return float(snapshot[layout.AGG_MEAN].mean())


def infer(
    snapshot: Snapshot,
    config: ProjectConfig,
    *,
    project_id: str,
    cycle: int,
    issued_at: int = 0,
) -> CommandMsg:
    """Command for `project_id` from the aggregates of `snapshot`.

    A snapshot without any aggregate yields a Hold command flagged stale.
    """
    try:
        observed = observed_value(snapshot)
    except StaleSnapshot:
        return CommandMsg(
            project_id=project_id,
            cycle=cycle,
            action=CommandAction.HOLD,
            magnitude=0.0,
            observed=0.0,
            issued_at=issued_at,
            stale=True,
        )
    action, magnitude = policy(observed, config.threshold, config.gain)
    return CommandMsg(
        project_id=project_id,
        cycle=cycle,
        action=action,
        magnitude=magnitude,
        observed=observed,
        issued_at=issued_at,
    )


class InferenceService:
    """Issue one command per project on each records update.

    Reads the region only.
    """

    role = "inference"

    def __init__(
        self, options: DemoConfig, *, region: RegionHandle, client: BusClient
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.region = region
        self.client = client
        self.channels = Channels.from_options(options)
        self.issued: list[CommandMsg] = []

    def start(self) -> None:
        self.client.subscribe(self.channels.records, self.on_records_updated)
        answer_ready_checks(self.client, self.channels, self.role)
        self.client.start()

    def on_records_updated(self, envelope: MessageEnvelope) -> None:
        update = decode(envelope.payload, RecordsUpdated)
        snapshot = self.region.read_snapshot(layout.AGGREGATE_GROUPS)
        for project_id in sorted(self.options.projects):
            self.issue(snapshot, project_id, update.cycle)

    def issue(self, snapshot: Snapshot, project_id: str, cycle: int) -> CommandMsg:
        project = self.options.projects[project_id]
        command = infer(
            snapshot,
            project,
            project_id=project_id,
            cycle=cycle,
            issued_at=time.time_ns(),
        )
        if command.stale:
            self.logger.warning(
                "Stale snapshot, holding",
                extra={"data": {"project": project_id, "cycle": cycle}},
            )
        self.client.publish(command_topic(project), encode(command))
        self.issued.append(command)
        return command