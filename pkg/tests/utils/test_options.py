import typing as t

import dataclasses
import enum

import pydantic.v1
import pytest

from anchor_runtime.utils.options import asdict
from anchor_runtime.utils.options import canonical_json
from anchor_runtime.utils.options import fromdict
from anchor_runtime.utils.options import json_serializer


class Color(enum.Enum):
    RED = "red"


@dataclasses.dataclass
class NestedObject:
    fielda: str


@dataclasses.dataclass
class Object:
    x: str
    y: float
    nested: dict[str, NestedObject]
    items: list[NestedObject] = dataclasses.field(default_factory=list)
    color: t.Optional[Color] = None


def test_fromdict_nested() -> None:
    obj = fromdict(
        {
            "x": "123",
            "y": "1.5",
            "nested": {"a": {"fielda": "1"}},
            "items": [{"fielda": "2"}],
            "color": "red",
        },
        Object,
    )
    assert obj == Object(
        x="123",
        y=1.5,
        nested={"a": NestedObject("1")},
        items=[NestedObject("2")],
        color=Color.RED,
    )


def test_fromdict_rejects_extra_fields() -> None:
    with pytest.raises(pydantic.v1.ValidationError):
        fromdict({"x": "1", "y": 1, "nested": {}, "z": 0}, Object)


def test_json_serializer() -> None:
    obj = Object(x="1", y=2.0, nested={}, color=Color.RED)
    assert json_serializer(obj) == (
        '{"x": "1", "y": 2.0, "nested": {}, "items": [], "color": "red"}'
    )
    assert asdict(obj) == {
        "x": "1",
        "y": 2.0,
        "nested": {},
        "items": [],
        "color": "red",
    }


def test_canonical_json_is_deterministic() -> None:
    assert canonical_json({"b": 1, "a": [1, 2]}) == b'{"a":[1,2],"b":1}'
    assert canonical_json({"a": [1, 2], "b": 1}) == canonical_json({"b": 1, "a": [1, 2]})
