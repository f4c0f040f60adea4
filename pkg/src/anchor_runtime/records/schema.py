import typing as t

import dataclasses

from anchor_runtime.core.errors import SchemaInvalid
from anchor_runtime.core.topic import is_token
from anchor_runtime.utils import StrEnum

#: Fixed region header.
HEADER_SIZE = 64
#: Group descriptors directory.
MAX_GROUPS = 64
DESCRIPTOR_SIZE = 64
#: Groups body starts right after the directory.
BODY_OFFSET = HEADER_SIZE + MAX_GROUPS * DESCRIPTOR_SIZE

MAX_NAME_LEN = 32
ALIGNMENT = 8


class ElementType(StrEnum):
    I64 = "i64"
    F64 = "f64"
    BYTES = "bytes"


class Role(StrEnum):
    INGESTION = "ingestion"
    FEEDBACK = "feedback"


@dataclasses.dataclass(frozen=True)
class FieldGroup:
    """A fixed-size array of one element type, owned by one writer role.

    `width` is only meaningful for BYTES groups: the fixed maximum length of
    each element.
    """

    name: str
    element_type: ElementType
    arity: int
    writer_role: Role
    width: int = 8

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "element_type", ElementType(self.element_type))
            object.__setattr__(self, "writer_role", Role(self.writer_role))
        except ValueError as e:
            raise SchemaInvalid(str(e)) from e

    @property
    def item_size(self) -> int:
        if self.element_type is ElementType.BYTES:
            return self.width
        return 8

    @property
    def nbytes(self) -> int:
        return self.arity * self.item_size

    @property
    def padded_size(self) -> int:
        return align(self.nbytes)

    @property
    def dtype(self) -> str:
        if self.element_type is ElementType.I64:
            return "<i8"
        if self.element_type is ElementType.F64:
            return "<f8"
        return f"S{self.width}"

    def validate(self) -> None:
        if not is_token(self.name) or len(self.name) > MAX_NAME_LEN:
            raise SchemaInvalid(f"Invalid group name: {self.name!r}")
        if self.arity < 1:
            raise SchemaInvalid(f"Group {self.name!r} must have arity >= 1")
        if self.element_type is ElementType.BYTES and self.width < 1:
            raise SchemaInvalid(f"Group {self.name!r} must have width >= 1")


@dataclasses.dataclass(frozen=True)
class RecordSchema:
    field_groups: tuple[FieldGroup, ...]
    schema_version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "field_groups", tuple(self.field_groups))

    def validate(self) -> None:
        if not self.field_groups:
            raise SchemaInvalid("Schema must declare at least one group")
        if len(self.field_groups) > MAX_GROUPS:
            raise SchemaInvalid(f"Schema declares more than {MAX_GROUPS} groups")
        if not 0 < self.schema_version < 2**32:
            raise SchemaInvalid(f"Invalid schema version: {self.schema_version}")
        names = set()
        for group in self.field_groups:
            group.validate()
            if group.name in names:
                raise SchemaInvalid(f"Duplicate group name: {group.name!r}")
            names.add(group.name)

    def group(self, name: str) -> t.Optional[FieldGroup]:
        for group in self.field_groups:
            if group.name == name:
                return group
        return None

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.field_groups]

    def extended(self, new_groups: t.Iterable[FieldGroup]) -> "RecordSchema":
        return RecordSchema(
            field_groups=self.field_groups + tuple(new_groups),
            schema_version=self.schema_version + 1,
        )


def align(size: int) -> int:
    """
    >>> align(1), align(8), align(9)
    (8, 8, 16)
    """
    return (size + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def group_offsets(groups: t.Iterable[FieldGroup]) -> dict[str, int]:
    """Body offsets of each group, packed in declaration order.

    Appending groups never moves the ones before them.
    """
    offsets = {}
    offset = BODY_OFFSET
    for group in groups:
        offsets[group.name] = offset
        offset += group.padded_size
    return offsets


def region_length(groups: t.Iterable[FieldGroup]) -> int:
    return BODY_OFFSET + sum(g.padded_size for g in groups)
