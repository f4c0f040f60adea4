from .backoff import Backoff
from .client import Accepted
from .client import BusClient
from .client import ClientHooks
from .client import ClientStats
from .client import DroppedLocal
from .client import PublishResult
from .recovery import Action
from .recovery import ClientState
from .recovery import RecoveryEvent
from .recovery import RecoveryMachine
from .recovery import Transition
from .recovery import recovery_step

__all__ = (
    "Accepted",
    "Action",
    "Backoff",
    "BusClient",
    "ClientHooks",
    "ClientState",
    "ClientStats",
    "DroppedLocal",
    "PublishResult",
    "RecoveryEvent",
    "RecoveryMachine",
    "Transition",
    "recovery_step",
)
