from .config_definitions import AnchorConfig
from .config_definitions import BenchConfig
from .config_definitions import BrokerConfig
from .config_definitions import ClientConfig
from .config_definitions import DemoConfig
from .config_definitions import Env
from .config_definitions import GatewayConfig
from .config_definitions import LinkConfig
from .config_definitions import ProjectConfig
from .config_definitions import RecordsConfig
from .default_config import config as default_config
from .utils.config import Config as _Config

SETTINGS_ENVVAR = "ANCHOR_SETTINGS"


class Config(_Config[AnchorConfig]):
    def __init__(self) -> None:
        super().__init__(AnchorConfig)


def default_config_with_env() -> Config:
    return Config().load_object(default_config).load_envvar(SETTINGS_ENVVAR)


__all__ = (
    "Config",
    "AnchorConfig",
    "BrokerConfig",
    "ClientConfig",
    "GatewayConfig",
    "LinkConfig",
    "RecordsConfig",
    "DemoConfig",
    "ProjectConfig",
    "BenchConfig",
    "Env",
    "default_config",
    "default_config_with_env",
)
