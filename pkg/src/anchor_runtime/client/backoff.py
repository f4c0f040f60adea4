import typing as t

import random


class Backoff:
    """Exponential reconnect delays with jitter.

    The n-th consecutive failure (counting from 0) waits
    ``min(base * factor**n, cap)`` scaled by a random factor within
    ``1 ± jitter``.

    >>> backoff = Backoff(base=0.1, factor=2, cap=5, jitter=0)
    >>> [backoff.failure() for _ in range(7)]
    [0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 5]
    """

    def __init__(
        self,
        *,
        base: float,
        factor: float,
        cap: float,
        jitter: float,
        rng: t.Optional[random.Random] = None,
    ) -> None:
        if not 0 <= jitter < 1:
            raise ValueError("Jitter must be within [0, 1)")
        self.base = base
        self.factor = factor
        self.cap = cap
        self.jitter = jitter
        self.rng = rng or random.Random()  # noqa: S311
        self.failures = 0

    def nominal(self, failures: int) -> float:
        return min(self.base * self.factor**failures, self.cap)

    def bounds(self, failures: int) -> tuple[float, float]:
        nominal = self.nominal(failures)
        return nominal * (1 - self.jitter), nominal * (1 + self.jitter)

    def failure(self) -> float:
        """Record a failure and return the delay before the next attempt."""
        nominal = self.nominal(self.failures)
        self.failures += 1
        if not self.jitter:
            return nominal
        return nominal * (1 + self.rng.uniform(-self.jitter, self.jitter))

    def reset(self) -> None:
        self.failures = 0
