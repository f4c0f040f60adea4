import bisect
import math
import random

import numpy as np
import pytest

from anchor_runtime.bench import ecdf
from anchor_runtime.bench import percentiles
from anchor_runtime.bench.stats import nearest_rank
from anchor_runtime.core.errors import EmptySamples


def brute_force_percentile(samples: list[int], tenths: int) -> int:
    """Smallest sample with at least `tenths`/10 percent of samples at or below it."""
    ordered = sorted(samples)
    for value in ordered:
        if bisect.bisect_right(ordered, value) * 1000 >= tenths * len(ordered):
            return value
    return ordered[-1]


def test_nearest_rank() -> None:
    assert [nearest_rank(p, 10) for p in (0, 10, 50, 90, 99, 100)] == [
        1,
        1,
        5,
        9,
        10,
        10,
    ]
    assert nearest_rank(50, 1) == 1
    assert nearest_rank(99, 1000) == 990
    assert nearest_rank(99.9, 1000) == 999
    with pytest.raises(ValueError):
        nearest_rank(101, 10)


def test_percentiles_match_brute_force() -> None:
    rng = random.Random(17)
    for _ in range(10_000):
        high = rng.choice((5, 1000))
        samples = [rng.randrange(high) for _ in range(rng.randrange(1, 120))]
        tenths = [500, 900, 990, rng.randrange(1001)]
        expected = [brute_force_percentile(samples, p) for p in tenths]
        ps = [p / 10 for p in tenths]
        assert percentiles(samples, ps) == expected
        assert percentiles(np.array(samples), ps) == expected

        cdf = dict(ecdf(samples))
        previous = {b: a for a, b in zip(sorted(cdf), sorted(cdf)[1:])}
        for p, value in zip(tenths, expected):
            assert cdf[value] * 1000 >= p - 1e-9
            if value in previous:
                assert cdf[previous[value]] * 1000 < p


def test_percentiles_single_and_equal_samples() -> None:
    assert percentiles([42], [0, 0.1, 50, 99.9, 100]) == [42] * 5
    assert percentiles([3] * 1000) == [3, 3, 3]
    assert ecdf([3] * 1000) == [(3, 1.0)]
    assert ecdf([9]) == [(9, 1.0)]


def test_percentiles_lower_median() -> None:
    assert percentiles([4, 1, 3, 2], [50]) == [2]
    assert percentiles([7.5], [0, 50, 100]) == [7.5, 7.5, 7.5]


def test_ecdf() -> None:
    rng = np.random.default_rng(5)
    samples = rng.integers(0, 50, size=500)
    points = ecdf(samples)
    values = [value for value, _ in points]
    assert values == sorted(set(samples.tolist()))
    for value, fraction in points:
        assert math.isclose(fraction, float(np.mean(samples <= value)))
    assert points[-1][1] == 1.0


def test_empty_samples() -> None:
    with pytest.raises(EmptySamples):
        percentiles([])
    with pytest.raises(EmptySamples):
        ecdf(np.array([], dtype=np.int64))
