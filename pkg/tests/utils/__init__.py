import typing as t

import asyncio
import random
import string

from anchor_runtime.core import GLOBAL
from anchor_runtime.core import LOCAL
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core import TopicAddress
from anchor_runtime.core import parse_topic

TOKEN_CHARS = string.ascii_letters + string.digits + "_-"


async def wait_until(
    predicate: t.Callable[[], bool], *, timeout: float = 2.0, interval: float = 0.005
) -> None:
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while not predicate():
        if loop.time() > deadline:
            raise AssertionError(f"Condition not met within {timeout}s")
        await asyncio.sleep(interval)


class Inbox:
    """Subscription handler keeping every delivered envelope."""

    def __init__(self) -> None:
        self.envelopes: list[MessageEnvelope] = []

    def __call__(self, envelope: MessageEnvelope) -> None:
        self.envelopes.append(envelope)

    def __len__(self) -> int:
        return len(self.envelopes)

    @property
    def payloads(self) -> list[bytes]:
        return [envelope.payload for envelope in self.envelopes]

    async def wait_for(self, count: int, *, timeout: float = 2.0) -> None:
        await wait_until(lambda: len(self.envelopes) >= count, timeout=timeout)


def make_envelope(
    topic: str,
    *,
    publisher_id: str = "pub",
    seq: int = 1,
    payload: bytes = b"",
    hop_count: int = 0,
) -> MessageEnvelope:
    return MessageEnvelope(
        topic=parse_topic(topic),
        publisher_id=publisher_id,
        seq=seq,
        ts_monotonic_ns=seq,
        payload=payload,
        hop_count=hop_count,
    )


def random_token(rng: random.Random, *, max_size: int = 12) -> str:
    # Now and then a token of the largest size the grammar allows.
    size = 255 if rng.random() < 0.02 else rng.randint(1, max_size)
    return "".join(rng.choices(TOKEN_CHARS, k=size))


def random_topic(rng: random.Random) -> TopicAddress:
    return TopicAddress(
        channel=random_token(rng),
        region=rng.choice((LOCAL, GLOBAL, random_token(rng))),
        node_id=random_token(rng) if rng.random() < 0.5 else None,
        prio=rng.randint(0, 7),
    )
