import typing as t

import dataclasses
import json
import os

from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.errors import LogCorrupt
from anchor_runtime.core.errors import VerificationMismatch
from anchor_runtime.records import LogKind
from anchor_runtime.records.log import scan_log
from anchor_runtime.utils.log import getLogger
from anchor_runtime.utils.options import fromdict

from .executor import Executor
from .executor import RecordedCommand
from .inference import policy
from .messages import CommandMsg
from .messages import EventMsg
from .messages import comparable
from .messages import decode

logger = getLogger(__name__)

EXECUTOR_LOG = "executor.ancl"


@dataclasses.dataclass(frozen=True)
class Divergence:
    cycle: int
    project_id: str
    #: "command" when re-inference disagreed, "event" otherwise.
    kind: str
    expected: bytes
    actual: bytes


@dataclasses.dataclass
class ReplayReport:
    commands: int = 0
    recorded: list[bytes] = dataclasses.field(default_factory=list)
    #: Reproduced event bodies, timestamps excluded.
    events: list[bytes] = dataclasses.field(default_factory=list)
    divergence: t.Optional[Divergence] = None
    corrupt_tail: bool = False

    @property
    def identical(self) -> bool:
        return self.divergence is None

    def check(self) -> None:
        if self.divergence is not None:
            d = self.divergence
            raise VerificationMismatch(
                f"Replay diverged at cycle {d.cycle} ({d.kind}, {d.project_id})",
                index=d.cycle,
            )


def log_path(options: DemoConfig) -> str:
    return os.path.join(options.log_dir, EXECUTOR_LOG)


def reinfer(command: CommandMsg, options: DemoConfig) -> CommandMsg:
    """Recompute a recorded command from its policy input."""
    if command.stale:
        return command
    project = options.projects.get(command.project_id)
    if project is None:
        raise ConfigError(f"Replay config has no project {command.project_id!r}")
    action, magnitude = policy(command.observed, project.threshold, project.gain)
    return dataclasses.replace(command, action=action, magnitude=magnitude)


def _decode_command(body: bytes) -> RecordedCommand:
    try:
        return fromdict(json.loads(body), RecordedCommand)
    except ValueError as e:
        raise LogCorrupt(f"Invalid command entry: {e}") from e


def first_event_divergence(
    recorded: list[EventMsg], produced: list[EventMsg]
) -> t.Optional[Divergence]:
    for i in range(max(len(recorded), len(produced))):
        expected = comparable(recorded[i]) if i < len(recorded) else b""
        actual = comparable(produced[i]) if i < len(produced) else b""
        if expected != actual:
            event = recorded[i] if i < len(recorded) else produced[i]
            return Divergence(
                cycle=event.cycle,
                project_id=event.project_id,
                kind="event",
                expected=expected,
                actual=actual,
            )
    return None


def replay_run(
    path: t.Union[str, os.PathLike],
    options: DemoConfig,
    *,
    reinference: bool = True,
) -> ReplayReport:
    """Feed recorded commands through a fresh executor.

    The reproduced events are compared with the recorded ones. The first
    difference, in a recomputed command or in an event, is reported with its
    cycle.
    """
    if os.path.exists(path) and os.path.getsize(path) == 0:
        return ReplayReport()
    scan = scan_log(path)
    report = ReplayReport(corrupt_tail=scan.corrupt_tail)
    executor = Executor(options)
    produced: list[EventMsg] = []
    recorded: list[EventMsg] = []

    for entry in scan.entries:
        if entry.kind is LogKind.COMMAND:
            item = _decode_command(entry.body)
            report.commands += 1
            command = item.command
            if reinference:
                command = reinfer(item.command, options)
                if report.divergence is None and comparable(command) != comparable(
                    item.command
                ):
                    report.divergence = Divergence(
                        cycle=command.cycle,
                        project_id=command.project_id,
                        kind="command",
                        expected=comparable(item.command),
                        actual=comparable(command),
                    )
            produced.extend(executor.execute(item.seq, command))
        elif entry.kind is LogKind.EVENT:
            recorded.append(decode(entry.body, EventMsg))

    report.events = [comparable(event) for event in produced]
    report.recorded = [comparable(event) for event in recorded]
    if report.divergence is None:
        report.divergence = first_event_divergence(recorded, produced)

    logger.info(
        "Replayed log",
        extra={
            "data": {
                "path": os.fspath(path),
                "commands": report.commands,
                "events": len(report.events),
                "identical": report.identical,
            }
        },
    )
    return report
