import dataclasses

from .errors import MalformedEnvelope
from .errors import MalformedTopic
from .topic import TopicAddress
from .topic import is_token

U64_MAX = 2**64 - 1
U8_MAX = 2**8 - 1

DEFAULT_MAX_PAYLOAD = 1 << 20
DEFAULT_MAX_HOPS = 4


@dataclasses.dataclass(frozen=True)
class MessageEnvelope:
    """One bus message. Commands and events share this envelope.

    Integer fields must fit their wire width: u64 for `seq` and
    `ts_monotonic_ns`, u8 for `hop_count`.
    """

    topic: TopicAddress
    publisher_id: str
    seq: int
    ts_monotonic_ns: int
    payload: bytes = b""
    #: Number of gateway links traversed.
    hop_count: int = 0

    def __post_init__(self) -> None:
        if not is_token(self.publisher_id):
            raise MalformedTopic(f"Invalid publisher token: {self.publisher_id!r}")
        for name, value, limit in (
            ("seq", self.seq, U64_MAX),
            ("ts_monotonic_ns", self.ts_monotonic_ns, U64_MAX),
            ("hop_count", self.hop_count, U8_MAX),
        ):
            if isinstance(value, bool) or not isinstance(value, int):
                raise MalformedEnvelope(f"{name} must be an integer: {value!r}")
            if not 0 <= value <= limit:
                raise MalformedEnvelope(f"{name} out of range: {value}")

    @property
    def channel(self) -> str:
        return self.topic.channel

    @property
    def dedupe_key(self) -> tuple[str, str, int]:
        return (self.publisher_id, self.topic.channel, self.seq)

    def forwarded(self) -> "MessageEnvelope":
        return dataclasses.replace(self, hop_count=self.hop_count + 1)
