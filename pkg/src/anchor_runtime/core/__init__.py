from .envelope import MessageEnvelope
from .errors import AnchorError
from .subscription import Subscription
from .topic import GLOBAL
from .topic import LOCAL
from .topic import TopicAddress
from .topic import format_topic
from .topic import parse_topic

__all__ = (
    "AnchorError",
    "GLOBAL",
    "LOCAL",
    "MessageEnvelope",
    "Subscription",
    "TopicAddress",
    "format_topic",
    "parse_topic",
)
