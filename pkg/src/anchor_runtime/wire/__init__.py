from .codec import DEFAULT_MAX_FRAME
from .codec import FrameCodec
from .codec import FrameDecoder
from .codec import decode_frame
from .codec import encode_frame
from .codec import envelope_wire_size
from .codec import max_frame_for
from .frames import DATA_FRAMES
from .frames import PROTOCOL_VERSION
from .frames import AckFrame
from .frames import AckStatus
from .frames import BatchFrame
from .frames import DataFrame
from .frames import Frame
from .frames import FrameTag
from .frames import HeartbeatFrame
from .frames import InvalidSubscribeFrame
from .frames import RegisterFrame
from .frames import StatsReplyFrame
from .frames import StatsRequestFrame
from .frames import SubscribeFrame
from .frames import UnsubscribeFrame
from .frames import envelopes_of

__all__ = (
    "AckFrame",
    "AckStatus",
    "BatchFrame",
    "DATA_FRAMES",
    "DEFAULT_MAX_FRAME",
    "DataFrame",
    "Frame",
    "FrameCodec",
    "FrameDecoder",
    "FrameTag",
    "HeartbeatFrame",
    "InvalidSubscribeFrame",
    "PROTOCOL_VERSION",
    "RegisterFrame",
    "StatsReplyFrame",
    "StatsRequestFrame",
    "SubscribeFrame",
    "UnsubscribeFrame",
    "decode_frame",
    "encode_frame",
    "envelope_wire_size",
    "envelopes_of",
    "max_frame_for",
)
