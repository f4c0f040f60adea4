import typing as t

import dataclasses
import json
from functools import cache

import pydantic.v1
import pydantic.v1.json

T = t.TypeVar("T")


class ModelConfig(pydantic.v1.BaseConfig):
    arbitrary_types_allowed = True
    extra = pydantic.v1.Extra.forbid


@cache
def schema_for(klass: t.Type) -> t.Type[pydantic.v1.BaseModel]:
    if issubclass(klass, pydantic.v1.BaseModel):
        return klass
    if dataclasses.is_dataclass(klass):
        return pydantic.v1.dataclasses.create_pydantic_model_from_dataclass(
            klass,  # type: ignore[arg-type]
            config=ModelConfig,
        )
    raise ValueError(f"Cannot get shema for {klass}")


def asdict(o: t.Any) -> dict[str, t.Any]:
    return json.loads(json_serializer(o))


def json_serializer(*args: t.Any, **kwargs: t.Any) -> str:
    kwargs.setdefault("default", pydantic.v1.json.pydantic_encoder)
    return json.dumps(*args, **kwargs)


def canonical_json(o: t.Any) -> bytes:
    """Deterministic JSON encoding, used for payload bodies compared on replay."""
    return json_serializer(o, sort_keys=True, separators=(",", ":")).encode()


def fromdict(d: dict[str, t.Any], klass: t.Type[T]) -> T:
    """Validate `d` against the dataclass `klass` and build an instance.

    Nested dataclasses are rebuilt as their own types.
    """
    schema = schema_for(t.cast(t.Hashable, klass))
    obj: pydantic.v1.BaseModel = schema.parse_obj(d)
    if dataclasses.is_dataclass(klass):
        return t.cast(T, _rebuild(klass, obj.dict()))
    return t.cast(T, obj)


def _rebuild(klass: t.Any, values: t.Any) -> t.Any:
    if not (dataclasses.is_dataclass(klass) and isinstance(values, dict)):
        return values
    hints = t.get_type_hints(klass)
    kwargs = {}
    for field in dataclasses.fields(klass):
        if field.name not in values:
            continue
        value = values[field.name]
        field_type = hints.get(field.name)
        origin = t.get_origin(field_type)
        args = t.get_args(field_type)
        if dataclasses.is_dataclass(field_type):
            value = _rebuild(field_type, value)
        elif origin is dict and args and dataclasses.is_dataclass(args[1]):
            value = {k: _rebuild(args[1], v) for k, v in value.items()}
        elif origin is list and args and dataclasses.is_dataclass(args[0]):
            value = [_rebuild(args[0], v) for v in value]
        kwargs[field.name] = value
    return klass(**kwargs)
