import dataclasses

from .errors import PatternInvalid
from .topic import TopicAddress
from .topic import is_token

WILDCARD = "*"


@dataclasses.dataclass(frozen=True)
class Subscription:
    """A node's declared interest.

    `channel` is an exact channel token or the single-level wildcard "*".
    `region` is a region token or "*" for any region. A `directed`
    subscription only receives messages addressed to the subscriber.
    """

    subscription_id: int
    channel: str
    region: str = WILDCARD
    directed: bool = False
    allow_self: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.subscription_id < 2**32:
            raise PatternInvalid(f"Invalid subscription id: {self.subscription_id}")
        for name, pattern in (("channel", self.channel), ("region", self.region)):
            if pattern != WILDCARD and not is_token(pattern):
                raise PatternInvalid(f"Invalid {name} pattern: {pattern!r}")

    @property
    def is_wildcard(self) -> bool:
        return self.channel == WILDCARD

    def matches(self, topic: TopicAddress, *, subscriber_id: str) -> bool:
        if self.channel != WILDCARD and self.channel != topic.channel:
            return False
        if self.region != WILDCARD and self.region != topic.region:
            return False
        if topic.node_id is not None and topic.node_id != subscriber_id:
            return False
        if self.directed and topic.node_id is None:
            return False
        return True
