"""Connection recovery state machine.

Pure transitions only: the client runs the returned actions. Faults move a
live connection to DRAINING, cleanup leads to DISCONNECTED, a backoff delay
leads to CONNECTING and an acknowledged registration to REGISTERED.
"""
import typing as t

import dataclasses
import enum
from collections import deque

from anchor_runtime.utils import StrEnum

HISTORY_SIZE = 256


class ClientState(StrEnum):
    DISCONNECTED = "disconnected"
    CONNECTING = "connecting"
    REGISTERED = "registered"
    DRAINING = "draining"


class RecoveryEvent(StrEnum):
    CONN_ERROR = "conn_error"
    RX_SILENCE = "rx_silence"
    HEARTBEAT_ACK_MISSING = "heartbeat_ack_missing"
    CONN_ESTABLISHED = "conn_established"
    REGISTER_ACKED = "register_acked"
    CLEANUP_DONE = "cleanup_done"
    BACKOFF_ELAPSED = "backoff_elapsed"


class Action(enum.Enum):
    OPEN_CONNECTION = "open_connection"
    SEND_REGISTRATION = "send_registration"
    CLOSE_CONNECTION = "close_connection"
    SCHEDULE_RECONNECT = "schedule_reconnect"
    RESET_BACKOFF = "reset_backoff"
    RESUME_SENDING = "resume_sending"


FAULTS = frozenset(
    {
        RecoveryEvent.CONN_ERROR,
        RecoveryEvent.RX_SILENCE,
        RecoveryEvent.HEARTBEAT_ACK_MISSING,
    }
)


@dataclasses.dataclass(frozen=True)
class Transition:
    previous: ClientState
    event: RecoveryEvent
    state: ClientState
    actions: tuple[Action, ...] = ()

    @property
    def changed(self) -> bool:
        return self.previous is not self.state


_TABLE: dict[tuple[ClientState, RecoveryEvent], tuple[ClientState, tuple[Action, ...]]]
_TABLE = {
    (ClientState.DISCONNECTED, RecoveryEvent.BACKOFF_ELAPSED): (
        ClientState.CONNECTING,
        (Action.OPEN_CONNECTION,),
    ),
    (ClientState.CONNECTING, RecoveryEvent.CONN_ESTABLISHED): (
        ClientState.CONNECTING,
        (Action.SEND_REGISTRATION,),
    ),
    (ClientState.CONNECTING, RecoveryEvent.REGISTER_ACKED): (
        ClientState.REGISTERED,
        (Action.RESET_BACKOFF, Action.RESUME_SENDING),
    ),
    (ClientState.DRAINING, RecoveryEvent.CLEANUP_DONE): (
        ClientState.DISCONNECTED,
        (Action.SCHEDULE_RECONNECT,),
    ),
}
for _state in (ClientState.CONNECTING, ClientState.REGISTERED):
    for _fault in FAULTS:
        _TABLE[(_state, _fault)] = (ClientState.DRAINING, (Action.CLOSE_CONNECTION,))


def recovery_step(state: ClientState, event: RecoveryEvent) -> Transition:
    """Next state for `event`. Events that do not apply leave the state as is."""
    state, event = ClientState(state), RecoveryEvent(event)
    next_state, actions = _TABLE.get((state, event), (state, ()))
    return Transition(previous=state, event=event, state=next_state, actions=actions)


class RecoveryMachine:
    def __init__(self, state: ClientState = ClientState.DISCONNECTED) -> None:
        self.state = state
        self.history: deque[Transition] = deque(maxlen=HISTORY_SIZE)

    def step(self, event: RecoveryEvent) -> Transition:
        transition = recovery_step(self.state, event)
        self.state = transition.state
        self.history.append(transition)
        return transition

    def states(self) -> list[ClientState]:
        """States visited, collapsing self-transitions."""
        visited: list[ClientState] = []
        for transition in self.history:
            if not visited:
                visited.append(transition.previous)
            if transition.state is not visited[-1]:
                visited.append(transition.state)
        return visited
