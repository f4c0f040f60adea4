import typing as t

import dataclasses
import re

from .errors import MalformedTopic

TOKEN_RE = re.compile(r"[A-Za-z0-9_-]{1,255}")

LOCAL = "local"
GLOBAL = "global"

MIN_PRIO = 0
MAX_PRIO = 7


def is_token(value: str) -> bool:
    return TOKEN_RE.fullmatch(value) is not None


@dataclasses.dataclass(frozen=True)
class TopicAddress:
    """Parsed form of "/channel/region/(nodeId)/prio".

    `region` is either "local", "global" or a named cluster token. A topic with
    a `node_id` is delivered only to that node.

    >>> parse_topic("/cmd/local/node7/3")
    TopicAddress(channel='cmd', region='local', node_id='node7', prio=3)
    >>> format_topic(TopicAddress("status", GLOBAL, None, 0))
    '/status/global/0'
    """

    channel: str
    region: str = LOCAL
    node_id: t.Optional[str] = None
    prio: int = 0

    def __post_init__(self) -> None:
        for name, token in (("channel", self.channel), ("region", self.region)):
            if not isinstance(token, str) or not is_token(token):
                raise MalformedTopic(f"Invalid {name} token: {token!r}")
        if self.node_id is not None and not is_token(self.node_id):
            raise MalformedTopic(f"Invalid node_id token: {self.node_id!r}")
        if (
            isinstance(self.prio, bool)
            or not isinstance(self.prio, int)
            or not MIN_PRIO <= self.prio <= MAX_PRIO
        ):
            raise MalformedTopic(f"Priority out of range: {self.prio!r}")

    @property
    def is_local(self) -> bool:
        return self.region == LOCAL

    @property
    def is_directed(self) -> bool:
        return self.node_id is not None

    def __str__(self) -> str:
        return format_topic(self)


def parse_topic(s: str) -> TopicAddress:
    if not s or not s.startswith("/"):
        raise MalformedTopic(f"Topic must start with '/': {s!r}")

    segments = s[1:].split("/")
    if len(segments) == 3:
        channel, region, prio = segments
        node_id = None
    elif len(segments) == 4:
        channel, region, node_id, prio = segments
    else:
        raise MalformedTopic(f"Expected 3 or 4 segments: {s!r}")

    if any(not segment for segment in segments):
        raise MalformedTopic(f"Empty segment: {s!r}")
    # Canonical priorities are a single digit.
    if len(prio) != 1 or not prio.isdigit():
        raise MalformedTopic(f"Invalid priority segment: {s!r}")

    return TopicAddress(channel=channel, region=region, node_id=node_id, prio=int(prio))


def format_topic(topic: TopicAddress) -> str:
    if topic.node_id is None:
        return f"/{topic.channel}/{topic.region}/{topic.prio}"
    return f"/{topic.channel}/{topic.region}/{topic.node_id}/{topic.prio}"
