import typing as t

import logging

from anchor_runtime.bus.broker import NodeSession
from anchor_runtime.bus.hooks import BatchFlushed
from anchor_runtime.bus.hooks import BrokerHooks
from anchor_runtime.bus.hooks import MessageDropped
from anchor_runtime.bus.hooks import SessionClosed
from anchor_runtime.bus.hooks import SubscriptionRejected
from anchor_runtime.client.client import ClientHooks
from anchor_runtime.client.recovery import Transition
from anchor_runtime.core import MessageEnvelope


def envelope_data(
    envelope: MessageEnvelope, *, verbose: bool = False
) -> dict[str, t.Any]:
    return {
        "topic": str(envelope.topic),
        "publisher": envelope.publisher_id,
        "seq": envelope.seq,
        "hops": envelope.hop_count,
    } | ({"payload_size": len(envelope.payload)} if verbose else {})


def session_data(session: NodeSession) -> dict[str, t.Any]:
    return {"node": session.node_id, "stats": vars(session.stats)}


class BusLogger:
    """Log bus events emitted by broker and client hooks."""

    def __init__(self, *, verbose: bool = False) -> None:
        self.verbose = verbose
        self.session_logger = logging.getLogger("anchor.sessions")
        self.message_logger = logging.getLogger("anchor.messages")

    def attach_broker(self, hooks: BrokerHooks) -> None:
        hooks.session_registered.register(self.on_session_registered)
        hooks.session_closed.register(self.on_session_closed)
        hooks.message_dropped.register(self.on_message_dropped)
        hooks.message_unroutable.register(self.on_message_unroutable)
        hooks.subscription_rejected.register(self.on_subscription_rejected)
        if self.verbose:
            hooks.batch_flushed.register(self.on_batch_flushed)

    def attach_client(self, hooks: ClientHooks) -> None:
        hooks.state_changed.register(self.on_state_changed)
        hooks.message_dropped.register(self.on_client_dropped)

    def on_session_registered(self, session: NodeSession) -> None:
        self.session_logger.info(
            "Node registered", extra={"data": {"node": session.node_id}}
        )

    def on_session_closed(self, event: SessionClosed) -> None:
        self.session_logger.info(
            "Session closed",
            extra={
                "data": session_data(event.session)
                | {"reason": str(event.reason), "discarded": event.discarded}
            },
        )

    def on_message_dropped(self, event: MessageDropped) -> None:
        self.message_logger.debug(
            "Dropped message",
            extra={
                "data": {"node": event.node_id, "reason": str(event.reason)}
                | envelope_data(event.envelope, verbose=self.verbose)
            },
        )

    def on_message_unroutable(self, envelope: MessageEnvelope) -> None:
        self.message_logger.debug(
            "Unroutable message",
            extra={"data": envelope_data(envelope, verbose=self.verbose)},
        )

    def on_subscription_rejected(self, event: SubscriptionRejected) -> None:
        self.session_logger.warning(
            "Rejected subscription", extra={"data": event._asdict()}
        )

    def on_batch_flushed(self, event: BatchFlushed) -> None:
        self.message_logger.debug(
            "Flushed batch", extra={"data": event._asdict()}
        )

    def on_state_changed(self, transition: Transition) -> None:
        if not transition.changed:
            return
        self.session_logger.debug(
            "Client state changed",
            extra={
                "data": {
                    "from": str(transition.previous),
                    "to": str(transition.state),
                    "event": str(transition.event),
                }
            },
        )

    def on_client_dropped(self, envelope: MessageEnvelope) -> None:
        self.message_logger.debug(
            "Dropped queued message",
            extra={"data": envelope_data(envelope, verbose=self.verbose)},
        )
