import typing as t

from collections import deque

from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.topic import MAX_PRIO

PRIORITIES = MAX_PRIO + 1


class QueuedEnvelope(t.NamedTuple):
    envelope: MessageEnvelope
    size: int
    enqueued_at: float


class PriorityQueues:
    """One bounded FIFO per priority, dequeued highest priority first.

    A full queue admits the newest envelope and drops its oldest one.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("Queue capacity must be >= 1")
        self.capacity = capacity
        self.queues: list[deque[QueuedEnvelope]] = [
            deque() for _ in range(PRIORITIES)
        ]
        self.nbytes = 0
        self._len = 0

    def push(self, item: QueuedEnvelope) -> t.Optional[QueuedEnvelope]:
        queue = self.queues[item.envelope.topic.prio]
        dropped = None
        if len(queue) >= self.capacity:
            dropped = queue.popleft()
            self.nbytes -= dropped.size
            self._len -= 1
        queue.append(item)
        self.nbytes += item.size
        self._len += 1
        return dropped

    def pop(self) -> QueuedEnvelope:
        for queue in reversed(self.queues):
            if queue:
                item = queue.popleft()
                self.nbytes -= item.size
                self._len -= 1
                return item
        raise IndexError("pop from empty queues")

    def requeue(self, items: list[QueuedEnvelope]) -> None:
        """Put popped `items` back at the head of their queues, in order."""
        for item in reversed(items):
            self.queues[item.envelope.topic.prio].appendleft(item)
            self.nbytes += item.size
            self._len += 1

    def peek(self) -> t.Optional[QueuedEnvelope]:
        for queue in reversed(self.queues):
            if queue:
                return queue[0]
        return None

    def oldest_enqueued_at(self) -> t.Optional[float]:
        heads = [queue[0].enqueued_at for queue in self.queues if queue]
        return min(heads) if heads else None

    def clear(self) -> list[QueuedEnvelope]:
        items = [item for queue in self.queues for item in queue]
        for queue in self.queues:
            queue.clear()
        self.nbytes = 0
        self._len = 0
        return items

    def lengths(self) -> list[int]:
        return [len(queue) for queue in self.queues]

    def __len__(self) -> int:
        return self._len

    def __bool__(self) -> bool:
        return self._len > 0
