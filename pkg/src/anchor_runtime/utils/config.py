import typing as t
from typing import Any
from typing import Generic
from typing import Type
from typing import TypeVar

import configparser
import inspect
import json
import os
import types
from collections.abc import Iterable
from collections.abc import Mapping

import pydantic.v1

from anchor_runtime.core.errors import ConfigError

from . import deep_merge
from .options import fromdict

T = TypeVar("T")
TConfig = TypeVar("TConfig", bound="Config")

ROOT_SECTION = "__root__"


class Config(Generic[T]):
    """Layered configuration validated against a dataclass interface.

    Layers are merged in load order, later layers winning. Every `load_*`
    returns a new config, leaving the original untouched.
    """

    def __init__(self, interface: Type[T]) -> None:
        self.interface = interface
        self._layers: list[dict[str, Any]] = []
        self._config: t.Optional[T] = None

    def load_object(self: TConfig, obj: Any) -> TConfig:
        """Load an object into the configuration.

        This can be a module, class, instance or dict.
        """
        return self.load_objects([obj])

    def load_objects(self: TConfig, objs: Iterable) -> TConfig:
        new_config = self.copy()
        for obj in objs:
            if obj is None:
                continue
            new_config._layers.append(object_to_dict(obj))
        return new_config

    def load_file(self: TConfig, path: t.Union[str, os.PathLike]) -> TConfig:
        """Load a flat `key = value` file with `[section]` headers."""
        return self.load_object(read_config_file(path))

    def load_envvar(self: TConfig, envvar: str) -> TConfig:
        """Load a config file from a path stored in an environment variable."""
        path = os.environ.get(envvar)
        if not path:
            return self
        return self.load_file(path)

    @property
    def c(self) -> T:
        if self._config is None:
            self._config = self.validate()
        return self._config

    @property
    def r(self) -> dict[str, Any]:
        return deep_merge(*self._layers)

    def validate(self) -> T:
        try:
            return fromdict(self.r, self.interface)
        except pydantic.v1.ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    def copy(self: TConfig) -> TConfig:
        new_config = type(self).__new__(type(self))
        new_config.interface = self.interface
        new_config._layers = list(self._layers)
        new_config._config = None
        return new_config


def object_to_dict(obj: Any) -> dict[str, Any]:
    if isinstance(obj, Mapping):
        return {
            k.lower(): object_to_dict(v) if isinstance(v, Mapping) else v
            for k, v in obj.items()
        }

    values: dict[str, Any] = {}
    for name in dir(obj):
        if name.startswith("_"):
            continue
        value = getattr(obj, name)
        if inspect.isclass(value):
            values[name.lower()] = object_to_dict(value)
        elif isinstance(value, (types.FunctionType, types.MethodType, types.ModuleType)):
            continue
        else:
            values[name.lower()] = value
    return values


def parse_value(raw: str) -> Any:
    """
    Values are JSON literals when they parse as such, strings otherwise.

    >>> parse_value("42"), parse_value("true"), parse_value("[3, 7]")
    (42, True, [3, 7])
    >>> parse_value("127.0.0.1:7450")
    '127.0.0.1:7450'
    """
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def read_config_file(path: t.Union[str, os.PathLike]) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as f:
            parser.read_string(f"[{ROOT_SECTION}]\n" + f.read(), source=str(path))
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e

    config: dict[str, Any] = {}
    for section in parser.sections():
        target = config
        if section != ROOT_SECTION:
            for part in section.lower().split("."):
                target = target.setdefault(part, {})
        for key, raw in parser.items(section):
            target[key.lower()] = parse_value(raw)
    return config
