from .forwarding import DEFAULT_DEDUPE_WINDOW
from .forwarding import Forwarder
from .forwarding import ForwardingStats
from .forwarding import Verdict
from .forwarding import in_scope
from .forwarding import mark_present
from .gateway import Gateway
from .gateway import GatewayLink
from .gateway import LinkDirection

__all__ = (
    "DEFAULT_DEDUPE_WINDOW",
    "Forwarder",
    "ForwardingStats",
    "Gateway",
    "GatewayLink",
    "LinkDirection",
    "Verdict",
    "in_scope",
    "mark_present",
)
