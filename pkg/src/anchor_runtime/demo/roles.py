from anchor_runtime.client import BusClient
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.errors import ProtocolError

from .channels import Channels
from .messages import ReadyCheck
from .messages import RoleReady
from .messages import decode
from .messages import encode


def answer_ready_checks(client: BusClient, channels: Channels, role: str) -> int:
    """Reply to the producer's readiness polls on the control channel.

    Each requester gets a single answer, so that the number of polls does not
    shift the sequence numbers of the role's later messages.
    """
    answered: set[str] = set()

    def on_control(envelope: MessageEnvelope) -> None:
        try:
            check = decode(envelope.payload, ReadyCheck)
        except ProtocolError:
            return
        if check.requester in answered:
            return
        answered.add(check.requester)
        client.publish(
            channels.control_topic, encode(RoleReady(role=role, node_id=client.node_id))
        )

    return client.subscribe(channels.control, on_control)
