"""Nearest-rank percentiles and empirical CDF of latency samples."""
import typing as t

import math
from fractions import Fraction

import numpy as np

from anchor_runtime.core.errors import EmptySamples

DEFAULT_PERCENTILES = (50, 90, 99)

Samples = t.Union[t.Sequence[float], np.ndarray]


def _sorted(samples: Samples) -> np.ndarray:
    values = np.sort(np.asarray(samples).ravel())
    if values.size == 0:
        raise EmptySamples("No samples")
    return values


def nearest_rank(p: float, n: int) -> int:
    """1-based rank of the `p`th percentile among `n` sorted samples.

    Computed on exact fractions so that 90% of 10 is rank 9, not 10.

    >>> nearest_rank(50, 10), nearest_rank(99, 10), nearest_rank(0, 10)
    (5, 10, 1)
    """
    if not 0 <= p <= 100:
        raise ValueError(f"Percentile out of range: {p}")
    rank = math.ceil(Fraction(p).limit_denominator(10**6) * n / 100)
    return min(max(rank, 1), n)


def percentiles(
    samples: Samples, ps: t.Iterable[float] = DEFAULT_PERCENTILES
) -> list[t.Any]:
    """Nearest-rank percentiles: the sample at rank ceil(p/100 * n).

    For p=50 on an even count this is the lower median.

    >>> percentiles([10, 20, 30, 40, 50, 60, 70, 80, 90, 100])
    [50, 90, 100]
    """
    values = _sorted(samples)
    n = values.size
    return [values[nearest_rank(p, n) - 1].item() for p in ps]


def ecdf(samples: Samples) -> list[tuple[t.Any, float]]:
    """Distinct sorted values with the fraction of samples at or below each.

    >>> ecdf([1, 1, 2])
    [(1, 0.6666666666666666), (2, 1.0)]
    """
    values = _sorted(samples)
    unique, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / values.size
    return list(zip(unique.tolist(), fractions.tolist()))
