import typing as t

import dataclasses
import enum

from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core import Subscription

PROTOCOL_VERSION = 1


class FrameTag(enum.IntEnum):
    DATA = 1
    BATCH = 2
    REGISTER = 3
    SUBSCRIBE = 4
    UNSUBSCRIBE = 5
    HEARTBEAT = 6
    ACK = 7
    STATS_REQUEST = 8
    STATS_REPLY = 9


class AckStatus(enum.IntEnum):
    OK = 0
    VERSION_MISMATCH = 1
    PATTERN_INVALID = 2
    ERROR = 3


@dataclasses.dataclass(frozen=True)
class DataFrame:
    envelope: MessageEnvelope

    tag: t.ClassVar[FrameTag] = FrameTag.DATA


@dataclasses.dataclass(frozen=True)
class BatchFrame:
    envelopes: tuple[MessageEnvelope, ...]

    tag: t.ClassVar[FrameTag] = FrameTag.BATCH

    def __post_init__(self) -> None:
        if not self.envelopes:
            raise ValueError("Batch must contain at least one envelope")


@dataclasses.dataclass(frozen=True)
class RegisterFrame:
    identity: str
    protocol_version: int = PROTOCOL_VERSION

    tag: t.ClassVar[FrameTag] = FrameTag.REGISTER


@dataclasses.dataclass(frozen=True)
class SubscribeFrame:
    subscription: Subscription

    tag: t.ClassVar[FrameTag] = FrameTag.SUBSCRIBE


@dataclasses.dataclass(frozen=True)
class InvalidSubscribeFrame:
    """A Subscribe whose channel or region is not a valid pattern.

    Decoding yields it in place of a SubscribeFrame so the broker can refuse
    the subscription with an Ack and keep the session.
    """

    subscription_id: int
    channel: str
    region: str
    flags: int = 0

    tag: t.ClassVar[FrameTag] = FrameTag.SUBSCRIBE


@dataclasses.dataclass(frozen=True)
class UnsubscribeFrame:
    subscription_id: int

    tag: t.ClassVar[FrameTag] = FrameTag.UNSUBSCRIBE


@dataclasses.dataclass(frozen=True)
class HeartbeatFrame:
    sender_id: str
    ts: int

    tag: t.ClassVar[FrameTag] = FrameTag.HEARTBEAT


@dataclasses.dataclass(frozen=True)
class AckFrame:
    """Acknowledge a control frame.

    `ref_seq` is the subscription id for Subscribe/Unsubscribe and 0 for
    Register.
    """

    ref_seq: int
    status: AckStatus = AckStatus.OK

    tag: t.ClassVar[FrameTag] = FrameTag.ACK


@dataclasses.dataclass(frozen=True)
class StatsRequestFrame:
    requester: str

    tag: t.ClassVar[FrameTag] = FrameTag.STATS_REQUEST


@dataclasses.dataclass(frozen=True)
class StatsReplyFrame:
    body: bytes

    tag: t.ClassVar[FrameTag] = FrameTag.STATS_REPLY


Frame = t.Union[
    DataFrame,
    BatchFrame,
    RegisterFrame,
    SubscribeFrame,
    InvalidSubscribeFrame,
    UnsubscribeFrame,
    HeartbeatFrame,
    AckFrame,
    StatsRequestFrame,
    StatsReplyFrame,
]

DATA_FRAMES = (DataFrame, BatchFrame)


def envelopes_of(frame: Frame) -> tuple[MessageEnvelope, ...]:
    if isinstance(frame, DataFrame):
        return (frame.envelope,)
    if isinstance(frame, BatchFrame):
        return frame.envelopes
    return ()
