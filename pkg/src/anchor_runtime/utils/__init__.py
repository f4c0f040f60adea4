import enum
from collections.abc import Mapping


class StrEnum(str, enum.Enum):
    def __str__(self) -> str:
        return self


def deep_merge(*dicts: Mapping) -> dict:
    """
    Merge mappings, later ones winning, recursing into nested mappings.

    >>> deep_merge({"a": {"x": 1, "y": 2}}, {"a": {"y": 3}, "b": 4})
    {'a': {'x': 1, 'y': 3}, 'b': 4}
    """
    merged: dict = {}
    for d in dicts:
        for k, v in d.items():
            mv = merged.get(k, ...)
            if mv is not ... and isinstance(v, Mapping) and isinstance(mv, Mapping):
                v = deep_merge(mv, v)
            merged[k] = v
    return merged
