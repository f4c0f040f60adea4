from .executor import Executor
from .executor import ExecutorService
from .executor import Plant
from .inference import InferenceService
from .inference import infer
from .inference import policy
from .materializer import Materializer
from .messages import CommandAction
from .messages import CommandMsg
from .messages import EventMsg
from .messages import EventStatus
from .producer import Aggregates
from .producer import Normalizer
from .producer import Preprocessor
from .producer import Producer
from .producer import WindowState
from .producer import preprocess
from .replay import ReplayReport
from .replay import replay_run
from .run import DemoReport
from .run import run_processes
from .run import run_role
from .run import run_tasks

__all__ = (
    "Aggregates",
    "CommandAction",
    "CommandMsg",
    "DemoReport",
    "EventMsg",
    "EventStatus",
    "Executor",
    "ExecutorService",
    "InferenceService",
    "Materializer",
    "Normalizer",
    "Plant",
    "Preprocessor",
    "Producer",
    "ReplayReport",
    "WindowState",
    "infer",
    "policy",
    "preprocess",
    "replay_run",
    "run_processes",
    "run_role",
    "run_tasks",
)
