from opentelemetry.metrics import get_meter

from anchor_runtime.core import MessageEnvelope

from .broker import NodeSession
from .hooks import BatchFlushed
from .hooks import BrokerHooks
from .hooks import MessageDropped
from .hooks import SessionClosed


class BusMetrics:
    """Export broker activity as OpenTelemetry instruments."""

    def __init__(self) -> None:
        self.meter = get_meter("anchor.metrics")
        self.sessions = self.meter.create_up_down_counter(
            name="anchor.bus.sessions",
            description="Live node sessions.",
        )
        self.session_closed_counter = self.meter.create_counter(
            name="anchor.bus.sessions.closed",
            description="Sessions closed, by reason.",
        )
        self.delivered_counter = self.meter.create_counter(
            name="anchor.bus.delivered",
            description="Envelopes handed to session senders.",
        )
        self.batch_bytes = self.meter.create_histogram(
            name="anchor.bus.batch.size",
            unit="By",
            description="Encoded envelope bytes per flushed frame.",
        )
        self.dropped_counter = self.meter.create_counter(
            name="anchor.bus.dropped",
            description="Envelopes dropped, by reason.",
        )
        self.unroutable_counter = self.meter.create_counter(
            name="anchor.bus.unroutable",
            description="Envelopes without any destination.",
        )

    def attach(self, hooks: BrokerHooks) -> None:
        hooks.session_registered.register(self.on_session_registered)
        hooks.session_closed.register(self.on_session_closed)
        hooks.batch_flushed.register(self.on_batch_flushed)
        hooks.message_dropped.register(self.on_message_dropped)
        hooks.message_unroutable.register(self.on_message_unroutable)

    def on_session_registered(self, session: NodeSession) -> None:
        self.sessions.add(1)

    def on_session_closed(self, event: SessionClosed) -> None:
        self.sessions.add(-1)
        self.session_closed_counter.add(1, {"reason": event.reason.value})
        if event.discarded:
            self.dropped_counter.add(event.discarded, {"reason": event.reason.value})

    def on_batch_flushed(self, event: BatchFlushed) -> None:
        self.delivered_counter.add(event.count)
        self.batch_bytes.record(event.nbytes)

    def on_message_dropped(self, event: MessageDropped) -> None:
        self.dropped_counter.add(1, {"reason": event.reason.value})

    def on_message_unroutable(self, envelope: MessageEnvelope) -> None:
        self.unroutable_counter.add(1, {"channel": envelope.channel})
