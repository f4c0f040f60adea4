"""Run the closed-loop demo, as tasks of one process or as child processes."""
import typing as t

import asyncio
import contextlib
import dataclasses
import itertools
import os
import signal
import sys

from anchor_runtime.bus import BrokerServer
from anchor_runtime.client import BusClient
from anchor_runtime.config_definitions import AnchorConfig
from anchor_runtime.core.errors import DemoError
from anchor_runtime.records import LogKind
from anchor_runtime.records import ReplayLog
from anchor_runtime.records import Role
from anchor_runtime.records import open_region
from anchor_runtime.records.log import scan_log
from anchor_runtime.utils.log import getLogger

from .channels import validate_projects
from .executor import ExecutorService
from .executor import RecordedCommand
from .inference import InferenceService
from .layout import ensure_region
from .layout import prepare_region
from .materializer import Materializer
from .materializer import audit_feedback
from .messages import EventMsg
from .messages import decode
from .producer import Producer
from .producer import ProducerReport
from .replay import log_path

logger = getLogger(__name__)

ROLES = ("inference", "executor", "materializer", "producer")
STOP_TIMEOUT = 5.0

_runs = itertools.count(1)


@dataclasses.dataclass
class DemoReport:
    producer: ProducerReport
    commands: int
    events: int
    feedback: dict[str, float]
    audit: list[str]
    log_path: str

    @property
    def clean(self) -> bool:
        return not self.audit and not self.producer.stalled


def audit_trace(path: str) -> tuple[int, int, list[str]]:
    """Count commands and events of a log.

    Every event must follow its command, which is resolved at most once.
    """
    commands: set[int] = set()
    resolved: set[int] = set()
    events = 0
    problems = []
    for entry in scan_log(path).entries:
        if entry.kind is LogKind.COMMAND:
            commands.add(decode(entry.body, RecordedCommand).seq)
        elif entry.kind is LogKind.EVENT:
            events += 1
            event = decode(entry.body, EventMsg)
            if event.ref_command not in commands:
                problems.append(f"orphan event for command {event.ref_command}")
            elif event.is_final:
                if event.ref_command in resolved:
                    problems.append(f"command {event.ref_command} resolved twice")
                resolved.add(event.ref_command)
    return len(commands), events, problems


def fresh_log(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with contextlib.suppress(FileNotFoundError):
        os.unlink(path)


def role_client(
    config: AnchorConfig, role: str, endpoint: t.Optional[str]
) -> BusClient:
    return BusClient(
        config.client,
        node_id=f"{config.client.node_id}-{role}",
        endpoint=endpoint or config.client.endpoint,
    )


async def run_tasks(
    config: AnchorConfig, *, endpoint: t.Optional[str] = None
) -> DemoReport:
    """Run every role in this process.

    Without `endpoint` an in-memory broker is started for the run.
    """
    options = config.demo
    validate_projects(options)
    region_path = config.records.region_path
    prepare_region(options, region_path)
    path = log_path(options)
    fresh_log(path)
    retries = config.records.max_retries

    async with contextlib.AsyncExitStack() as stack:
        if endpoint is None:
            broker_options = dataclasses.replace(
                config.broker,
                listen=f"mem://demo-{os.getpid()}-{next(_runs)}",
                state_dir=None,
            )
            broker = await stack.enter_async_context(BrokerServer(broker_options))
            endpoint = str(broker.endpoint)

        log = stack.enter_context(
            ReplayLog(path, flush_every=config.records.flush_every)
        )
        ingestion = stack.enter_context(
            open_region(region_path, role=Role.INGESTION, max_retries=retries)
        )
        feedback = stack.enter_context(
            open_region(region_path, role=Role.FEEDBACK, max_retries=retries)
        )
        reader = stack.enter_context(open_region(region_path, max_retries=retries))

        clients = {role: role_client(config, role, endpoint) for role in ROLES}
        for client in clients.values():
            stack.push_async_callback(client.close)

        inference = InferenceService(
            options, region=reader, client=clients["inference"]
        )
        executor = ExecutorService(options, client=clients["executor"], log=log)
        materializer = Materializer(
            options, region=feedback, client=clients["materializer"]
        )
        producer = Producer(options, region=ingestion, client=clients["producer"])
        for role in (inference, executor, materializer, producer):
            role.start()

        producer_report = await producer.run()
        audit = audit_feedback(reader, materializer.latest)
        log.flush()
        feedback_values = {
            project_id: event.measured
            for project_id, event in materializer.latest.items()
        }

    commands, events, problems = audit_trace(path)
    report = DemoReport(
        producer=producer_report,
        commands=commands,
        events=events,
        feedback=feedback_values,
        audit=audit + problems,
        log_path=path,
    )
    logger.info(
        "Demo run finished",
        extra={
            "data": {
                "cycles": producer_report.cycles,
                "commands": commands,
                "events": events,
                "stalled": producer_report.stalled,
                "audit": report.audit,
            }
        },
    )
    return report


async def run_role(
    config: AnchorConfig,
    role: str,
    *,
    endpoint: t.Optional[str] = None,
    stop: t.Optional[asyncio.Event] = None,
) -> t.Optional[ProducerReport]:
    """Run a single role until `stop` is set, or until the producer is done."""
    if role not in ROLES:
        raise DemoError(f"Unknown demo role: {role!r}")
    options = config.demo
    validate_projects(options)
    region_path = config.records.region_path
    retries = config.records.max_retries
    stop = stop or asyncio.Event()
    client = role_client(config, role, endpoint)

    with contextlib.ExitStack() as stack:
        if role == "producer":
            ensure_region(options, region_path)
            region = stack.enter_context(
                open_region(region_path, role=Role.INGESTION, max_retries=retries)
            )
            producer = Producer(options, region=region, client=client)
            producer.start()
            try:
                return await producer.run()
            finally:
                await client.close()

        service: t.Union[InferenceService, ExecutorService, Materializer]
        if role == "inference":
            region = stack.enter_context(open_region(region_path, max_retries=retries))
            service = InferenceService(options, region=region, client=client)
        elif role == "executor":
            path = log_path(options)
            os.makedirs(options.log_dir, exist_ok=True)
            log = stack.enter_context(
                ReplayLog(path, flush_every=config.records.flush_every)
            )
            service = ExecutorService(options, client=client, log=log)
        else:
            region = stack.enter_context(
                open_region(region_path, role=Role.FEEDBACK, max_retries=retries)
            )
            service = Materializer(options, region=region, client=client)

        service.start()
        try:
            await stop.wait()
        finally:
            await client.close()
    return None


async def _terminate(process: asyncio.subprocess.Process) -> None:
    if process.returncode is not None:
        return
    with contextlib.suppress(ProcessLookupError):
        process.send_signal(signal.SIGTERM)
    try:
        await asyncio.wait_for(process.wait(), STOP_TIMEOUT)
    except asyncio.TimeoutError:
        with contextlib.suppress(ProcessLookupError):
            process.kill()
        await process.wait()


async def run_processes(
    config: AnchorConfig,
    *,
    config_path: t.Optional[str] = None,
    endpoint: t.Optional[str] = None,
) -> int:
    """Run a broker and one child process per role.

    Returns the producer's exit status. The other children are stopped once
    the producer exits.
    """
    options = config.demo
    validate_projects(options)
    prepare_region(options, config.records.region_path)
    fresh_log(log_path(options))

    command = [sys.executable, "-m", "anchor_runtime"]
    config_args = ["--config", config_path] if config_path else []
    children: list[asyncio.subprocess.Process] = []
    try:
        if endpoint is None:
            endpoint = config.broker.listen
            children.append(
                await asyncio.create_subprocess_exec(
                    *command, "broker", *config_args, "--listen", endpoint
                )
            )
        for role in ROLES:
            role_args = ["--cycles", str(options.cycles)] if role == "producer" else []
            process = await asyncio.create_subprocess_exec(
                *command, "demo", role, *config_args, "--endpoint", endpoint, *role_args
            )
            children.append(process)
        producer = children[-1]
        returncode = await producer.wait()
        logger.info("Producer exited", extra={"data": {"returncode": returncode}})
        return returncode
    finally:
        # Roles before the broker.
        for process in reversed(children):
            await _terminate(process)
