import dataclasses

from anchor_runtime.config_definitions import DemoConfig
from anchor_runtime.config_definitions import ProjectConfig
from anchor_runtime.core import LOCAL
from anchor_runtime.core import TopicAddress
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.topic import MAX_PRIO
from anchor_runtime.core.topic import MIN_PRIO

RECORDS_PRIO = 4
CONTROL_PRIO = 6


@dataclasses.dataclass(frozen=True)
class Channels:
    """Coordination channels derived from the records channel."""

    records: str

    @classmethod
    def from_options(cls, options: DemoConfig) -> "Channels":
        return cls(records=options.records_channel)

    @property
    def applied(self) -> str:
        return f"{self.records}_applied"

    @property
    def control(self) -> str:
        return f"{self.records}_ctl"

    @property
    def records_topic(self) -> TopicAddress:
        return TopicAddress(self.records, LOCAL, None, RECORDS_PRIO)

    @property
    def applied_topic(self) -> TopicAddress:
        return TopicAddress(self.applied, LOCAL, None, RECORDS_PRIO)

    @property
    def control_topic(self) -> TopicAddress:
        return TopicAddress(self.control, LOCAL, None, CONTROL_PRIO)


def command_topic(project: ProjectConfig) -> TopicAddress:
    return TopicAddress(project.command_channel, LOCAL, None, project.command_prio)


def status_topic(project: ProjectConfig) -> TopicAddress:
    return TopicAddress(project.status_channel, LOCAL, None, project.status_prio)


def validate_projects(options: DemoConfig) -> None:
    reserved = {options.records_channel}
    channels = Channels.from_options(options)
    reserved |= {channels.applied, channels.control}
    for project_id, project in options.projects.items():
        if project.command_channel == project.status_channel:
            raise ConfigError(f"Project {project_id!r} uses one channel twice")
        if {project.command_channel, project.status_channel} & reserved:
            raise ConfigError(f"Project {project_id!r} uses a reserved channel")
        for prio in (project.command_prio, project.status_prio):
            if not MIN_PRIO <= prio <= MAX_PRIO:
                raise ConfigError(f"Project {project_id!r} priority out of range")
        if project.gain < 0:
            raise ConfigError(f"Project {project_id!r} gain must not be negative")
