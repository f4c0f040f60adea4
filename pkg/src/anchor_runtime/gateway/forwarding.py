import typing as t

import dataclasses
import enum

from anchor_runtime.core import GLOBAL
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.envelope import DEFAULT_MAX_HOPS
from anchor_runtime.utils.lru import LRUSet

DEFAULT_DEDUPE_WINDOW = 65536

# (cluster, publisher_id, channel, seq)
DedupeKey = tuple[str, str, str, int]
DedupeWindow = LRUSet[DedupeKey]


def mark_present(
    window: DedupeWindow, cluster: str, envelope: MessageEnvelope
) -> None:
    """Record that `envelope` already reached `cluster`.

    A forwarder sharing `window` then refuses to inject it there again.
    """
    if not envelope.topic.is_local:
        window.add_if_absent((cluster, *envelope.dedupe_key))


class Verdict(enum.Enum):
    FORWARD = "forward"
    LOCAL = "local"
    OTHER_CLUSTER = "other_cluster"
    HOPS_EXCEEDED = "hops_exceeded"
    DUPLICATE = "duplicate"


def in_scope(envelope: MessageEnvelope, target_cluster: str) -> bool:
    """Whether the envelope's region reaches `target_cluster`.

    >>> from anchor_runtime.core import parse_topic
    >>> def envelope(topic):
    ...     return MessageEnvelope(parse_topic(topic), "n1", 1, 0)
    >>> in_scope(envelope("/cmd/global/5"), "b")
    True
    >>> in_scope(envelope("/cmd/b/5"), "b"), in_scope(envelope("/cmd/c/5"), "b")
    (True, False)
    >>> in_scope(envelope("/cmd/local/5"), "b")
    False
    """
    region = envelope.topic.region
    return region == GLOBAL or region == target_cluster


@dataclasses.dataclass
class ForwardingStats:
    forward: int = 0
    local: int = 0
    other_cluster: int = 0
    hops_exceeded: int = 0
    duplicate: int = 0

    def count(self, verdict: Verdict) -> None:
        setattr(self, verdict.value, getattr(self, verdict.value) + 1)


class Forwarder:
    """Forwarding filter of one link direction.

    The dedupe window records each cluster an envelope was re-injected into,
    and the cluster it came from. Forwarders sharing a window inject an
    envelope at most once per cluster while its entry stays in the window.
    """

    def __init__(
        self,
        target_cluster: str,
        *,
        source_cluster: t.Optional[str] = None,
        window: t.Optional[DedupeWindow] = None,
        max_hops: int = DEFAULT_MAX_HOPS,
    ) -> None:
        self.target_cluster = target_cluster
        self.source_cluster = source_cluster
        if window is None:
            window = LRUSet(cache_len=DEFAULT_DEDUPE_WINDOW)
        self.window = window
        self.max_hops = max_hops
        self.stats = ForwardingStats()

    def verdict(self, envelope: MessageEnvelope) -> Verdict:
        key = envelope.dedupe_key
        if envelope.topic.is_local:
            verdict = Verdict.LOCAL
        elif not in_scope(envelope, self.target_cluster):
            verdict = Verdict.OTHER_CLUSTER
        elif envelope.hop_count >= self.max_hops:
            verdict = Verdict.HOPS_EXCEEDED
        elif not self.window.add_if_absent((self.target_cluster, *key)):
            verdict = Verdict.DUPLICATE
        else:
            if self.source_cluster is not None:
                self.window.add_if_absent((self.source_cluster, *key))
            verdict = Verdict.FORWARD
        self.stats.count(verdict)
        return verdict

    def should_forward(self, envelope: MessageEnvelope) -> bool:
        """Filter and record the envelope. A second offer returns False."""
        return self.verdict(envelope) is Verdict.FORWARD

    @staticmethod
    def reinject(envelope: MessageEnvelope) -> MessageEnvelope:
        return envelope.forwarded()
