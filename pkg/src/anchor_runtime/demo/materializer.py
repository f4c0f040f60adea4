import typing as t

from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.records import RegionHandle
from anchor_runtime.utils.log import getLogger

from . import layout
from .channels import Channels
from .messages import EventMsg
from .messages import EventStatus
from .messages import FeedbackApplied
from .messages import decode
from .messages import encode
from .roles import answer_ready_checks


class Materializer:
    """Write measured values of successful executions to the feedback groups.

    Started events are ignored and failures leave the feedback untouched.
    """

    role = "materializer"

    def __init__(
        self, options: DemoConfig, *, region: RegionHandle, client: BusClient
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.region = region
        self.client = client
        self.channels = Channels.from_options(options)
        #: Latest successful event per project.
        self.latest: dict[str, EventMsg] = {}

    def start(self) -> None:
        channels = {p.status_channel for p in self.options.projects.values()}
        for channel in sorted(channels):
            self.client.subscribe(channel, self.on_event)
        answer_ready_checks(self.client, self.channels, self.role)
        self.client.start()

    def materialize(self, event: EventMsg) -> bool:
        if event.status is not EventStatus.SUCCESS:
            return False
        self.region.write_groups(
            {
                layout.feedback_group(event.project_id): [event.measured],
                layout.feedback_ref_group(event.project_id): [
                    event.ref_command,
                    event.cycle,
                ],
            }
        )
        self.latest[event.project_id] = event
        return True

    def on_event(self, envelope: MessageEnvelope) -> None:
        event = decode(envelope.payload, EventMsg)
        if not event.is_final or event.project_id not in self.options.projects:
            return
        self.materialize(event)
        self.client.publish(
            self.channels.applied_topic,
            encode(
                FeedbackApplied(
                    project_id=event.project_id,
                    cycle=event.cycle,
                    status=event.status,
                )
            ),
        )


def audit_feedback(
    region: RegionHandle, latest: t.Mapping[str, EventMsg]
) -> list[str]:
    """Projects whose feedback group differs from their latest success."""
    problems = []
    for project_id, event in sorted(latest.items()):
        name = layout.feedback_group(project_id)
        value = float(region.read_snapshot([name])[name][0])
        if value != event.measured:
            problems.append(
                f"{project_id}: feedback {value!r} != measured {event.measured!r}"
            )
    return problems
