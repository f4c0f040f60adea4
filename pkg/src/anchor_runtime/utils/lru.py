import typing as t

import threading
from collections import OrderedDict

K = t.TypeVar("K")


class LRUSet(t.Generic[K]):
    """Set with a limited length, ejecting the least recently added keys.

    Safe to share between threads and tasks.

    >>> window = LRUSet(cache_len=2)
    >>> window.add_if_absent("a"), window.add_if_absent("a")
    (True, False)
    >>> window.add_if_absent("b"), window.add_if_absent("c")
    (True, True)
    >>> "a" in window
    False
    """

    def __init__(self, cache_len: int = 10) -> None:
        if cache_len <= 0:
            raise ValueError("cache_len must be greater than 0")
        self.cache_len = cache_len
        self._keys: OrderedDict[K, None] = OrderedDict()
        self._lock = threading.Lock()

    def add_if_absent(self, key: K) -> bool:
        """Insert `key`, returning False when it was already present."""
        with self._lock:
            if key in self._keys:
                self._keys.move_to_end(key)
                return False
            self._keys[key] = None
            while len(self._keys) > self.cache_len:
                self._keys.popitem(last=False)
            return True

    def __contains__(self, key: object) -> bool:
        with self._lock:
            return key in self._keys

    def __len__(self) -> int:
        return len(self._keys)
