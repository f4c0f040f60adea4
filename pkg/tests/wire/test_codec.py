import dataclasses
import random
import struct

import pytest

from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core import Subscription
from anchor_runtime.core import parse_topic
from anchor_runtime.core.errors import BadMagic
from anchor_runtime.core.errors import FrameTooLarge
from anchor_runtime.core.errors import LengthMismatch
from anchor_runtime.core.errors import MalformedTopic
from anchor_runtime.core.errors import ProtocolError
from anchor_runtime.core.errors import Truncated
from anchor_runtime.core.errors import UnknownTag
from anchor_runtime.wire import AckFrame
from anchor_runtime.wire import AckStatus
from anchor_runtime.wire import BatchFrame
from anchor_runtime.wire import DataFrame
from anchor_runtime.wire import Frame
from anchor_runtime.wire import FrameCodec
from anchor_runtime.wire import FrameDecoder
from anchor_runtime.wire import FrameTag
from anchor_runtime.wire import HeartbeatFrame
from anchor_runtime.wire import InvalidSubscribeFrame
from anchor_runtime.wire import RegisterFrame
from anchor_runtime.wire import StatsReplyFrame
from anchor_runtime.wire import StatsRequestFrame
from anchor_runtime.wire import SubscribeFrame
from anchor_runtime.wire import UnsubscribeFrame
from anchor_runtime.wire import decode_frame
from anchor_runtime.wire import encode_frame
from anchor_runtime.wire import envelope_wire_size
from anchor_runtime.wire.codec import HEADER_SIZE

from tests.utils import random_token
from tests.utils import random_topic


def make_envelope(
    topic: str = "/c/local/1", *, seq: int = 1, payload: bytes = b"hi"
) -> MessageEnvelope:
    return MessageEnvelope(
        topic=parse_topic(topic),
        publisher_id="p",
        seq=seq,
        ts_monotonic_ns=2,
        payload=payload,
    )


def header(tag: int, length: int) -> bytes:
    return b"AB\x01" + struct.pack("<BI", tag, length)


def test_data_frame_layout() -> None:
    envelope = make_envelope()
    body = (
        b"\x01c"
        + b"\x05local"
        + b"\x00"
        + b"\x01"
        + b"\x01p"
        + struct.pack("<QQB", 1, 2, 0)
        + struct.pack("<I", 2)
        + b"hi"
    )
    data = encode_frame(DataFrame(envelope))
    assert data == header(1, len(body)) + body
    assert envelope_wire_size(envelope) == len(body)
    assert decode_frame(data) == (DataFrame(envelope), len(data))


def test_directed_envelope_layout() -> None:
    envelope = make_envelope("/c/global/n7/7", payload=b"")
    body = encode_frame(DataFrame(envelope))[8:]
    assert body.startswith(b"\x01c\x06global\x02n7\x07\x01p")
    assert envelope_wire_size(envelope) == len(body)


def test_control_frames_layout() -> None:
    assert encode_frame(RegisterFrame("n1")) == header(3, 5) + b"\x02n1\x01\x00"
    assert encode_frame(
        SubscribeFrame(Subscription(9, "cmd", "*", directed=True, allow_self=True))
    ) == header(4, 11) + struct.pack("<IB", 9, 3) + b"\x03cmd\x01*"
    assert encode_frame(UnsubscribeFrame(9)) == header(5, 4) + struct.pack("<I", 9)
    assert encode_frame(AckFrame(9, AckStatus.VERSION_MISMATCH)) == header(
        7, 9
    ) + struct.pack("<QB", 9, 1)
    assert encode_frame(StatsReplyFrame(b"{}")) == header(9, 6) + b"\x02\x00\x00\x00{}"


def test_decode_every_frame_kind() -> None:
    frames = [
        DataFrame(make_envelope()),
        BatchFrame((make_envelope(seq=1), make_envelope("/d/global/n1/0", seq=2))),
        RegisterFrame("node-1"),
        SubscribeFrame(Subscription(7, "*", "cluster_b", directed=True)),
        UnsubscribeFrame(7),
        HeartbeatFrame("broker", 123456789),
        AckFrame(0),
        StatsRequestFrame("node-1"),
        StatsReplyFrame(b'{"sessions":1}'),
    ]
    codec = FrameCodec()
    for frame in frames:
        data = codec.encode(frame)
        assert data[3] == frame.tag
        assert codec.decode(data + b"AB") == (frame, len(data))


def test_decode_header_errors() -> None:
    data = encode_frame(AckFrame(1))
    with pytest.raises(BadMagic):
        decode_frame(b"XB\x01" + data[3:])
    # Corruption is caught before a full header arrived.
    with pytest.raises(BadMagic):
        decode_frame(b"AC")
    with pytest.raises(UnknownTag):
        decode_frame(data[:3] + b"\x0a" + data[4:])
    with pytest.raises(UnknownTag):
        decode_frame(data[:3] + b"\x00" + data[4:])

    with pytest.raises(Truncated) as exc_info:
        decode_frame(data[:5])
    assert exc_info.value.bytes_needed == 3
    with pytest.raises(Truncated) as exc_info:
        decode_frame(data[:-2])
    assert exc_info.value.bytes_needed == 2


def test_frame_size_limit() -> None:
    codec = FrameCodec(max_frame=64)
    small = DataFrame(make_envelope(payload=b"x" * 16))
    large = DataFrame(make_envelope(payload=b"x" * 64))
    assert codec.decode(codec.encode(small))[0] == small

    with pytest.raises(FrameTooLarge):
        codec.encode(large)
    # Rejected from the header alone.
    with pytest.raises(FrameTooLarge):
        codec.decode(header(1, 1 << 20))


def test_decode_body_errors() -> None:
    # Trailing bytes inside the declared body.
    body = encode_frame(UnsubscribeFrame(1))[8:] + b"\x00"
    with pytest.raises(LengthMismatch):
        decode_frame(header(5, len(body)) + body)

    # A token overrunning the body.
    with pytest.raises(LengthMismatch):
        decode_frame(header(8, 2) + b"\x05a")

    # Empty tokens are malformed.
    with pytest.raises(LengthMismatch):
        decode_frame(header(8, 1) + b"\x00")

    with pytest.raises(MalformedTopic):
        decode_frame(header(8, 3) + b"\x02\xc3\xa9")

    with pytest.raises(ProtocolError):
        decode_frame(header(7, 9) + struct.pack("<QB", 1, 42))

    # Topic tokens are validated on decode.
    envelope = encode_frame(DataFrame(make_envelope()))[8:]
    body = b"\x03c d" + envelope[2:]
    with pytest.raises(MalformedTopic):
        decode_frame(header(1, len(body)) + body)


def test_decode_batch_errors() -> None:
    with pytest.raises(LengthMismatch):
        decode_frame(header(2, 4) + struct.pack("<I", 0))

    item = encode_frame(DataFrame(make_envelope()))[8:]
    # Item length one byte longer than its envelope.
    body = struct.pack("<I", 1) + struct.pack("<I", len(item) + 1) + item + b"\x00"
    with pytest.raises(LengthMismatch):
        decode_frame(header(2, len(body)) + body)

    # Declared count larger than the items present.
    body = struct.pack("<I", 2) + struct.pack("<I", len(item)) + item
    with pytest.raises(LengthMismatch):
        decode_frame(header(2, len(body)) + body)


def test_decode_invalid_subscription() -> None:
    body = struct.pack("<IB", 1, 2) + b"\x02c*" + b"\x01*"
    data = header(4, len(body)) + body
    # Kept as a frame so the broker can answer it without closing the session.
    assert decode_frame(data) == (InvalidSubscribeFrame(1, "c*", "*", 2), len(data))
    assert encode_frame(InvalidSubscribeFrame(1, "c*", "*", 2)) == data


def test_empty_batch_rejected() -> None:
    with pytest.raises(ValueError):
        BatchFrame(())


def test_stream_decoder_keeps_partial_frames() -> None:
    data = encode_frame(AckFrame(1)) + encode_frame(AckFrame(2))
    decoder = FrameDecoder()
    assert decoder.feed(data[:20]) == [AckFrame(1)]
    assert decoder.pending == 3
    assert decoder.feed(data[20:]) == [AckFrame(2)]

    with pytest.raises(BadMagic):
        decoder.feed(b"garbage!")


def test_frame_tags() -> None:
    assert [tag.value for tag in FrameTag] == list(range(1, 10))


MAX_FRAME = 1 << 16


def random_envelope(rng: random.Random) -> MessageEnvelope:
    envelope = MessageEnvelope(
        topic=random_topic(rng),
        publisher_id=random_token(rng),
        seq=rng.randrange(2**64),
        ts_monotonic_ns=rng.randrange(2**64),
        hop_count=rng.randrange(256),
    )
    if rng.random() < 0.01:
        # Fill the frame exactly up to the size limit.
        size = MAX_FRAME - HEADER_SIZE - envelope_wire_size(envelope)
    else:
        size = rng.randrange(300)
    return dataclasses.replace(envelope, payload=rng.randbytes(size))


def random_frame(rng: random.Random, tag: FrameTag) -> Frame:
    if tag is FrameTag.DATA:
        return DataFrame(random_envelope(rng))
    if tag is FrameTag.BATCH:
        envelopes = []
        for _ in range(rng.randint(1, 4)):
            envelope = random_envelope(rng)
            envelopes.append(dataclasses.replace(envelope, payload=envelope.payload[:64]))
        return BatchFrame(tuple(envelopes))
    if tag is FrameTag.REGISTER:
        return RegisterFrame(random_token(rng), rng.randrange(2**16))
    if tag is FrameTag.SUBSCRIBE:
        subscription_id = rng.randrange(2**32)
        if rng.random() < 0.2:
            channel = (
                random_token(rng, max_size=8)[:100]
                + rng.choice("/*. ")
                + random_token(rng, max_size=8)[:100]
            )
            return InvalidSubscribeFrame(
                subscription_id, channel, rng.choice(("*", "local")), rng.randrange(4)
            )
        return SubscribeFrame(
            Subscription(
                subscription_id,
                rng.choice(("*", random_token(rng))),
                rng.choice(("*", random_token(rng))),
                directed=rng.random() < 0.5,
                allow_self=rng.random() < 0.5,
            )
        )
    if tag is FrameTag.UNSUBSCRIBE:
        return UnsubscribeFrame(rng.randrange(2**32))
    if tag is FrameTag.HEARTBEAT:
        return HeartbeatFrame(random_token(rng), rng.randrange(2**64))
    if tag is FrameTag.ACK:
        return AckFrame(rng.randrange(2**64), rng.choice(list(AckStatus)))
    if tag is FrameTag.STATS_REQUEST:
        return StatsRequestFrame(random_token(rng))
    return StatsReplyFrame(rng.randbytes(rng.randrange(200)))


def random_frames(rng: random.Random, count: int) -> list[Frame]:
    tags = list(FrameTag)
    return [random_frame(rng, rng.choice(tags)) for _ in range(count)]


def test_random_frames_round_trip() -> None:
    rng = random.Random(1234)
    codec = FrameCodec(max_frame=MAX_FRAME)
    seen = set()
    at_limit = 0
    for frame in random_frames(rng, 10_000):
        data = codec.encode(frame)
        assert codec.encode(frame) == data
        assert codec.decode(data) == (frame, len(data))
        seen.add(type(frame))
        at_limit += len(data) == MAX_FRAME
    assert len(seen) == len(FrameTag) + 1
    assert at_limit > 0


def test_stream_decoder_random_chunks() -> None:
    rng = random.Random(4321)
    codec = FrameCodec(max_frame=MAX_FRAME)
    frames = random_frames(rng, 10_000)
    stream = b"".join(codec.encode(frame) for frame in frames)

    decoder = FrameDecoder(codec)
    decoded = []
    offset = 0
    while offset < len(stream):
        size = rng.choice((1, rng.randrange(1, 97), rng.randrange(1, 4096)))
        decoded.extend(decoder.feed(stream[offset : offset + size]))
        offset += size
    assert decoded == frames
    assert decoder.pending == 0


def test_stream_decoder_large_frame_bytewise() -> None:
    frame = DataFrame(make_envelope(payload=b"x" * 200_000))
    data = encode_frame(frame)
    decoder = FrameDecoder()
    for i in range(len(data) - 1):
        assert decoder.feed(data[i : i + 1]) == []
    assert decoder.needed == len(data)
    assert decoder.feed(data[-1:]) == [frame]
    assert decoder.pending == 0
    assert decoder.needed == 0
