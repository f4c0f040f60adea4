"""Binary framing for all bus traffic.

Every frame is ``magic(3) | tag(1) | body_length(u32 LE) | body``. Integers
are little-endian and fixed width, tokens are prefixed by a u8 length and
payloads by a u32 length. See docs/wire.md for the byte-offset tables.
"""
import typing as t

import struct

from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core import Subscription
from anchor_runtime.core import TopicAddress
from anchor_runtime.core.errors import BadMagic
from anchor_runtime.core.errors import FrameTooLarge
from anchor_runtime.core.errors import LengthMismatch
from anchor_runtime.core.errors import MalformedTopic
from anchor_runtime.core.errors import PatternInvalid
from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.core.errors import Truncated
from anchor_runtime.core.errors import UnknownTag

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

MAGIC = b"AB\x01"
HEADER = struct.Struct("<3sBI")
HEADER_SIZE = HEADER.size

DEFAULT_MAX_FRAME = 4 << 20

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
# seq, ts_monotonic_ns, hop_count
_ENVELOPE_FIXED = struct.Struct("<QQB")
# subscription_id, flags
_SUBSCRIPTION_FIXED = struct.Struct("<IB")
_ACK = struct.Struct("<QB")

_DIRECTED = 0x01
_ALLOW_SELF = 0x02


def _token(value: str) -> bytes:
    raw = value.encode("ascii")
    return _U8.pack(len(raw)) + raw


def _optional_token(value: t.Optional[str]) -> bytes:
    if value is None:
        return _U8.pack(0)
    return _token(value)


def _encode_envelope(envelope: MessageEnvelope) -> bytes:
    topic = envelope.topic
    return b"".join(
        (
            _token(topic.channel),
            _token(topic.region),
            _optional_token(topic.node_id),
            _U8.pack(topic.prio),
            _token(envelope.publisher_id),
            _ENVELOPE_FIXED.pack(
                envelope.seq, envelope.ts_monotonic_ns, envelope.hop_count
            ),
            _U32.pack(len(envelope.payload)),
            envelope.payload,
        )
    )


def envelope_wire_size(envelope: MessageEnvelope) -> int:
    """Encoded size of `envelope` inside a Data frame body."""
    topic = envelope.topic
    return (
        len(topic.channel)
        + len(topic.region)
        + len(topic.node_id or "")
        + len(envelope.publisher_id)
        + 5
        + _ENVELOPE_FIXED.size
        + _U32.size
        + len(envelope.payload)
    )


# Largest envelope encoding around its payload: four 255-byte tokens with
# their length prefixes, prio, the fixed integers and the payload length.
MAX_ENVELOPE_OVERHEAD = 4 * (1 + 255) + 1 + _ENVELOPE_FIXED.size + _U32.size


def max_frame_for(max_payload: int) -> int:
    """Frame size needed by a Data frame carrying `max_payload` bytes."""
    return HEADER_SIZE + MAX_ENVELOPE_OVERHEAD + max_payload


def _encode_body(frame: Frame) -> bytes:
    if isinstance(frame, DataFrame):
        return _encode_envelope(frame.envelope)
    if isinstance(frame, BatchFrame):
        parts = [_U32.pack(len(frame.envelopes))]
        for envelope in frame.envelopes:
            body = _encode_envelope(envelope)
            parts.append(_U32.pack(len(body)))
            parts.append(body)
        return b"".join(parts)
    if isinstance(frame, RegisterFrame):
        return _token(frame.identity) + _U16.pack(frame.protocol_version)
    if isinstance(frame, SubscribeFrame):
        sub = frame.subscription
        flags = (_DIRECTED if sub.directed else 0) | (
            _ALLOW_SELF if sub.allow_self else 0
        )
        return (
            _SUBSCRIPTION_FIXED.pack(sub.subscription_id, flags)
            + _token(sub.channel)
            + _token(sub.region)
        )
    if isinstance(frame, InvalidSubscribeFrame):
        return (
            _SUBSCRIPTION_FIXED.pack(frame.subscription_id, frame.flags)
            + _token(frame.channel)
            + _token(frame.region)
        )
    if isinstance(frame, UnsubscribeFrame):
        return _U32.pack(frame.subscription_id)
    if isinstance(frame, HeartbeatFrame):
        return _token(frame.sender_id) + _U64.pack(frame.ts)
    if isinstance(frame, AckFrame):
        return _ACK.pack(frame.ref_seq, int(frame.status))
    if isinstance(frame, StatsRequestFrame):
        return _token(frame.requester)
    if isinstance(frame, StatsReplyFrame):
        return _U32.pack(len(frame.body)) + frame.body
    raise UnknownTag(f"Cannot encode {frame!r}")


class _BodyReader:
    def __init__(self, body: memoryview) -> None:
        self.body = body
        self.offset = 0

    def take(self, n: int) -> memoryview:
        end = self.offset + n
        if end > len(self.body):
            raise LengthMismatch(
                f"Body field overruns declared length ({end} > {len(self.body)})"
            )
        view = self.body[self.offset : end]
        self.offset = end
        return view

    def unpack(self, fmt: struct.Struct) -> tuple[t.Any, ...]:
        return fmt.unpack(self.take(fmt.size))

    def u8(self) -> int:
        return self.unpack(_U8)[0]

    def u32(self) -> int:
        return self.unpack(_U32)[0]

    def token(self) -> str:
        size = self.u8()
        if size == 0:
            raise LengthMismatch("Empty token")
        return self._ascii(self.take(size))

    def optional_token(self) -> t.Optional[str]:
        size = self.u8()
        if size == 0:
            return None
        return self._ascii(self.take(size))

    def blob(self) -> bytes:
        return bytes(self.take(self.u32()))

    def done(self) -> None:
        if self.offset != len(self.body):
            raise LengthMismatch(
                f"Declared body length {len(self.body)}, consumed {self.offset}"
            )

    @staticmethod
    def _ascii(raw: memoryview) -> str:
        try:
            return bytes(raw).decode("ascii")
        except UnicodeDecodeError as e:
            raise MalformedTopic("Token is not ASCII") from e


def _decode_envelope(reader: _BodyReader) -> MessageEnvelope:
    channel = reader.token()
    region = reader.token()
    node_id = reader.optional_token()
    prio = reader.u8()
    publisher_id = reader.token()
    seq, ts, hop_count = reader.unpack(_ENVELOPE_FIXED)
    payload = reader.blob()
    return MessageEnvelope(
        topic=TopicAddress(channel=channel, region=region, node_id=node_id, prio=prio),
        publisher_id=publisher_id,
        seq=seq,
        ts_monotonic_ns=ts,
        hop_count=hop_count,
        payload=payload,
    )


def _decode_body(tag: FrameTag, reader: _BodyReader) -> Frame:
    frame: Frame
    if tag is FrameTag.DATA:
        frame = DataFrame(_decode_envelope(reader))
    elif tag is FrameTag.BATCH:
        count = reader.u32()
        if count == 0:
            raise LengthMismatch("Empty batch")
        envelopes = []
        for _ in range(count):
            inner = _BodyReader(reader.take(reader.u32()))
            envelopes.append(_decode_envelope(inner))
            inner.done()
        frame = BatchFrame(tuple(envelopes))
    elif tag is FrameTag.REGISTER:
        identity = reader.token()
        frame = RegisterFrame(identity, reader.unpack(_U16)[0])
    elif tag is FrameTag.SUBSCRIBE:
        subscription_id, flags = reader.unpack(_SUBSCRIPTION_FIXED)
        channel = reader.token()
        region = reader.token()
        try:
            frame = SubscribeFrame(
                Subscription(
                    subscription_id=subscription_id,
                    channel=channel,
                    region=region,
                    directed=bool(flags & _DIRECTED),
                    allow_self=bool(flags & _ALLOW_SELF),
                )
            )
        except PatternInvalid:
            frame = InvalidSubscribeFrame(subscription_id, channel, region, flags)
    elif tag is FrameTag.UNSUBSCRIBE:
        frame = UnsubscribeFrame(reader.u32())
    elif tag is FrameTag.HEARTBEAT:
        sender_id = reader.token()
        frame = HeartbeatFrame(sender_id, reader.unpack(_U64)[0])
    elif tag is FrameTag.ACK:
        ref_seq, status = reader.unpack(_ACK)
        try:
            frame = AckFrame(ref_seq, AckStatus(status))
        except ValueError as e:
            raise ProtocolError(f"Unknown ack status: {status}") from e
    elif tag is FrameTag.STATS_REQUEST:
        frame = StatsRequestFrame(reader.token())
    elif tag is FrameTag.STATS_REPLY:
        frame = StatsReplyFrame(reader.blob())
    else:
        raise UnknownTag(f"Unhandled tag: {tag!r}")
    reader.done()
    return frame


class FrameCodec:
    def __init__(self, *, max_frame: int = DEFAULT_MAX_FRAME) -> None:
        self.max_frame = max_frame

    def encode(self, frame: Frame) -> bytes:
        body = _encode_body(frame)
        size = HEADER_SIZE + len(body)
        if size > self.max_frame:
            raise FrameTooLarge(f"Frame of {size} bytes exceeds {self.max_frame}")
        return HEADER.pack(MAGIC, int(frame.tag), len(body)) + body

    def decode(self, data: t.Union[bytes, bytearray, memoryview]) -> tuple[Frame, int]:
        """Decode the first frame of `data`.

        Returns the frame and the number of bytes consumed.
        """
        view = memoryview(data)
        if len(view) < HEADER_SIZE:
            # Detect corruption as early as the magic bytes allow.
            if bytes(view[: len(MAGIC)]) != MAGIC[: len(view)]:
                raise BadMagic("Invalid frame magic")
            raise Truncated(HEADER_SIZE - len(view))

        magic, raw_tag, length = HEADER.unpack_from(view, 0)
        if magic != MAGIC:
            raise BadMagic("Invalid frame magic")
        try:
            tag = FrameTag(raw_tag)
        except ValueError as e:
            raise UnknownTag(f"Unknown frame tag: {raw_tag}") from e

        size = HEADER_SIZE + length
        if size > self.max_frame:
            raise FrameTooLarge(f"Frame of {size} bytes exceeds {self.max_frame}")
        if len(view) < size:
            raise Truncated(size - len(view))

        try:
            frame = _decode_body(tag, _BodyReader(view[HEADER_SIZE:size]))
        except ValueError as e:
            raise LengthMismatch(str(e)) from e
        return frame, size


class FrameDecoder:
    """Incremental decoder for a byte stream of concatenated frames.

    A partial frame is decoded again only once the bytes it declared have
    arrived, so a large frame fed in small chunks costs linear time.
    """

    def __init__(self, codec: t.Optional[FrameCodec] = None) -> None:
        self.codec = codec or FrameCodec()
        self.buffer = bytearray()
        # Bytes the partial frame at the head of the buffer still waits for.
        self.needed = 0

    def feed(self, data: bytes) -> list[Frame]:
        self.buffer += data
        if len(self.buffer) < self.needed:
            return []

        frames = []
        offset = 0
        self.needed = 0
        # Snapshot so no view outlives this call and pins the buffer size.
        data = bytes(self.buffer)
        view = memoryview(data)
        while offset < len(view):
            try:
                frame, consumed = self.codec.decode(view[offset:])
            except Truncated as e:
                self.needed = len(view) - offset + e.bytes_needed
                break
            frames.append(frame)
            offset += consumed
        if offset:
            del self.buffer[:offset]
        return frames

    @property
    def pending(self) -> int:
        return len(self.buffer)


_default_codec = FrameCodec()


def encode_frame(frame: Frame) -> bytes:
    return _default_codec.encode(frame)


def decode_frame(data: t.Union[bytes, bytearray, memoryview]) -> tuple[Frame, int]:
    return _default_codec.decode(data)
