import typing as t

import dataclasses
import time
from collections import Counter

from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.errors import ExecutionFailure
from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.records import LogKind
from anchor_runtime.records import ReplayLog
from anchor_runtime.utils.log import getLogger
from anchor_runtime.utils.options import canonical_json

from .channels import Channels
from .channels import status_topic
from .messages import CommandAction
from .messages import CommandMsg
from .messages import EventMsg
from .messages import EventStatus
from .messages import decode
from .messages import encode
from .roles import answer_ready_checks


@dataclasses.dataclass(frozen=True)
class RecordedCommand:
    seq: int
    command: CommandMsg


def command_body(seq: int, command: CommandMsg) -> bytes:
    return canonical_json(RecordedCommand(seq=seq, command=command))


class Plant:
    """Simulated remote endpoint: a scalar moved by each command."""

    def __init__(self, value: float = 0.0) -> None:
        self.value = value

    def apply(self, action: CommandAction, magnitude: float) -> float:
        if action is CommandAction.INCREASE:
            self.value += magnitude
        elif action is CommandAction.DECREASE:
            self.value -= magnitude
        return self.value


class Executor:
    """Execute commands against per-project plants.

    Commands and the events they produce are appended to `log` when set.
    Commands listed in the failure schedule (1-based, counted per project)
    fail without touching the plant.
    """

    def __init__(self, options: DemoConfig, *, log: t.Optional[ReplayLog] = None):
        self.options = options
        self.log = log
        self.failure_schedule = frozenset(options.failure_schedule)
        self.plants = {
            project_id: Plant(options.plant_initial) for project_id in options.projects
        }
        self.executed: Counter[str] = Counter()

    def invoke(self, command: CommandMsg) -> float:
        plant = self.plants.get(command.project_id)
        if plant is None:
            raise ExecutionFailure(f"Unknown project {command.project_id!r}")
        if self.executed[command.project_id] in self.failure_schedule:
            raise ExecutionFailure("Injected failure")
        return plant.apply(command.action, command.magnitude)

    def execute(
        self, seq: int, command: CommandMsg, *, reported_at: int = 0
    ) -> list[EventMsg]:
        if self.log is not None:
            self.log.record(LogKind.COMMAND, command_body(seq, command))
        self.executed[command.project_id] += 1

        plant = self.plants.get(command.project_id)
        started = EventMsg(
            project_id=command.project_id,
            ref_command=seq,
            cycle=command.cycle,
            status=EventStatus.STARTED,
            measured=plant.value if plant else 0.0,
            reported_at=reported_at,
        )
        try:
            measured = self.invoke(command)
            final = dataclasses.replace(
                started, status=EventStatus.SUCCESS, measured=measured
            )
        except ExecutionFailure as e:
            final = dataclasses.replace(
                started, status=EventStatus.FAILURE, reason=str(e)
            )

        events = [started, final]
        if self.log is not None:
            for event in events:
                self.log.record(LogKind.EVENT, encode(event))
        return events


class ExecutorService:
    role = "executor"

    def __init__(
        self, options: DemoConfig, *, client: BusClient, log: t.Optional[ReplayLog]
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.client = client
        self.executor = Executor(options, log=log)
        self.channels = Channels.from_options(options)

    def start(self) -> None:
        channels = {p.command_channel for p in self.options.projects.values()}
        for channel in sorted(channels):
            self.client.subscribe(channel, self.on_command)
        answer_ready_checks(self.client, self.channels, self.role)
        self.client.start()

    def on_command(self, envelope: MessageEnvelope) -> None:
        try:
            command = decode(envelope.payload, CommandMsg)
        except ProtocolError:
            self.logger.warning(
                "Ignoring malformed command",
                extra={"data": {"topic": str(envelope.topic), "seq": envelope.seq}},
            )
            return
        project = self.options.projects.get(command.project_id)
        if project is None or project.command_channel != envelope.channel:
            return

        events = self.executor.execute(
            envelope.seq, command, reported_at=time.time_ns()
        )
        for event in events:
            self.client.publish(status_topic(project), encode(event))
        if events[-1].status is EventStatus.FAILURE:
            self.logger.info(
                "Command failed",
                extra={"data": {"cycle": command.cycle, "reason": events[-1].reason}},
            )
