from typing import Type
from typing import TypeVar
from typing import Union

import logging

T = TypeVar("T")

PACKAGE = "anchor_runtime."


def getLogger(module: str, klass: Union[Type[T], T, None] = None) -> logging.Logger:
    """Logger named "anchor.<module>[.<Class>]"."""
    if module.startswith(PACKAGE):
        module = "anchor." + module[len(PACKAGE) :]
    if klass is None:
        return logging.getLogger(module)
    if not isinstance(klass, type):
        klass = klass.__class__
    return logging.getLogger(f"{module}.{klass.__name__}")
