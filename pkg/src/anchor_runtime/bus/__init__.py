from .broker import Broker
from .broker import Dropped
from .broker import Enqueued
from .broker import NodeSession
from .hooks import BrokerHooks
from .server import BrokerServer
from .transport import Connection
from .transport import Endpoint
from .transport import open_connection
from .transport import parse_endpoint
from .transport import start_server

__all__ = (
    "Broker",
    "BrokerHooks",
    "BrokerServer",
    "Connection",
    "Dropped",
    "Endpoint",
    "Enqueued",
    "NodeSession",
    "open_connection",
    "parse_endpoint",
    "start_server",
)
