import typing as t

import asyncio
import dataclasses
import functools
import logging
import sys

import click

from anchor_runtime.bench import grid
from anchor_runtime.bench import record_deliveries
from anchor_runtime.bench import run_latency
from anchor_runtime.bench import run_recovery
from anchor_runtime.bench import write_latency
from anchor_runtime.bench import write_trace
from anchor_runtime.bench.latency import BENCH_CHANNEL
from anchor_runtime.bench.latency import PAYLOADS
from anchor_runtime.bench.latency import RATES
from anchor_runtime.bench.processes import READY_LINE
from anchor_runtime.bus import BrokerServer
from anchor_runtime.bus.metrics import BusMetrics
from anchor_runtime.client import BusClient
from anchor_runtime.client import ClientHooks
from anchor_runtime.config import AnchorConfig
from anchor_runtime.config import Config
from anchor_runtime.config import default_config_with_env
from anchor_runtime.core.errors import AnchorError
from anchor_runtime.core.errors import ConfigError
from anchor_runtime.core.errors import ExitCode
from anchor_runtime.demo import run as demo_run
from anchor_runtime.demo.replay import log_path
from anchor_runtime.demo.replay import replay_run
from anchor_runtime.gateway import Gateway
from anchor_runtime.loggers import console_logging
from anchor_runtime.loggers.bus_logger import BusLogger
from anchor_runtime.records import open_region
from anchor_runtime.runner import run
from anchor_runtime.runner import run_until_stopped
from anchor_runtime.utils.log import getLogger
from anchor_runtime.utils.options import json_serializer

logger = getLogger(__name__)

STATS_TIMEOUT = 5.0

F = t.TypeVar("F", bound=t.Callable[..., t.Any])


def load_config(path: t.Optional[str] = None) -> Config:
    config = default_config_with_env()
    if path:
        config = config.load_file(path)
    return config


def with_config(func: F) -> F:
    """Add --config and --check-config, passing the validated `config`."""

    @click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="Configuration file, layered over the defaults.",
    )
    @click.option(
        "--check-config",
        is_flag=True,
        help="Validate the configuration and exit without side effects.",
    )
    @functools.wraps(func)
    def wrapper(
        *args: t.Any,
        config_path: t.Optional[str],
        check_config: bool,
        **kwargs: t.Any,
    ) -> t.Any:
        config = load_config(config_path).c
        if check_config:
            click.echo("Configuration OK")
            return ExitCode.OK
        return func(*args, config=config, config_path=config_path, **kwargs)

    return t.cast(F, wrapper)


def echo_json(body: t.Any, **kwargs: t.Any) -> None:
    click.echo(json_serializer(body, **kwargs))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    console_logging.setup(logging.DEBUG if verbose else logging.INFO)


@cli.command()
@click.option("--listen", help="Listen address, host:port or mem://name.")
@click.option("--state-dir", help="Mirror broker counters in this directory.")
@with_config
@click.pass_context
def broker(
    ctx: click.Context,
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    listen: t.Optional[str],
    state_dir: t.Optional[str],
) -> int:
    """Run a broker until SIGINT or SIGTERM."""
    options = config.broker
    if listen:
        options = dataclasses.replace(options, listen=listen)
    if state_dir:
        options = dataclasses.replace(options, state_dir=state_dir)
    server = BrokerServer(options)
    BusLogger(verbose=ctx.obj["verbose"]).attach_broker(server.hooks)
    BusMetrics().attach(server.hooks)
    run(run_until_stopped(server.run(), stop=server.stop))
    return ExitCode.OK


@cli.command()
@with_config
@click.pass_context
def gateway(
    ctx: click.Context, *, config: AnchorConfig, config_path: t.Optional[str]
) -> int:
    """Run the configured gateway links until SIGINT or SIGTERM."""
    if not config.gateway.links:
        raise ConfigError("No gateway links configured")
    hooks = ClientHooks()
    BusLogger(verbose=ctx.obj["verbose"]).attach_client(hooks)

    async def main() -> None:
        instance = Gateway(
            config.gateway, client_options=config.client, client_hooks=hooks
        )
        await run_until_stopped(instance.run(), stop=instance.stop)

    run(main())
    return ExitCode.OK


@cli.group()
def demo() -> None:
    """Closed-loop demo roles."""


def _role_command(role: str) -> None:
    @demo.command(name=role, help=f"Run the {role} role of the demo.")
    @click.option("--endpoint", help="Broker endpoint.")
    @with_config
    def command(
        *,
        config: AnchorConfig,
        config_path: t.Optional[str],
        endpoint: t.Optional[str],
        **kwargs: t.Any,
    ) -> int:
        if (cycles := kwargs.get("cycles")) is not None:
            config = dataclasses.replace(
                config, demo=dataclasses.replace(config.demo, cycles=cycles)
            )

        async def main() -> t.Any:
            stop = asyncio.Event()
            return await run_until_stopped(
                demo_run.run_role(config, role, endpoint=endpoint, stop=stop),
                stop=stop.set,
            )

        report = run(main())
        if report is not None and report.stalled:
            return ExitCode.RUNTIME
        return ExitCode.OK

    if role == "producer":
        click.option("--cycles", type=click.IntRange(min=1))(command)


for _role in demo_run.ROLES:
    _role_command(_role)


@demo.command(name="run")
@click.option("--cycles", type=click.IntRange(min=1), help="Cycles to run.")
@click.option(
    "--mode",
    type=click.Choice(["tasks", "processes"]),
    default="tasks",
    show_default=True,
)
@click.option("--endpoint", help="Use a running broker.")
@with_config
def demo_run_command(
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    cycles: t.Optional[int],
    mode: str,
    endpoint: t.Optional[str],
) -> int:
    """Run every role for a number of cycles and audit the trace."""
    if cycles is not None:
        config = dataclasses.replace(
            config, demo=dataclasses.replace(config.demo, cycles=cycles)
        )

    if mode == "tasks":
        report = run(demo_run.run_tasks(config, endpoint=endpoint))
        echo_json(
            {
                "cycles": report.producer.cycles,
                "stalled": report.producer.stalled,
                "commands": report.commands,
                "events": report.events,
                "feedback": report.feedback,
                "audit": report.audit,
                "log": report.log_path,
            }
        )
        if report.audit:
            return ExitCode.VERIFICATION
        return ExitCode.RUNTIME if report.producer.stalled else ExitCode.OK

    returncode = run(
        demo_run.run_processes(config, config_path=config_path, endpoint=endpoint)
    )
    commands, events, problems = demo_run.audit_trace(log_path(config.demo))
    echo_json({"commands": commands, "events": events, "audit": problems})
    if returncode != 0:
        return ExitCode.RUNTIME
    return ExitCode.VERIFICATION if problems else ExitCode.OK


@cli.group()
def bench() -> None:
    """Latency and recovery benchmarks."""


@bench.command()
@click.option("--payload", type=click.IntRange(min=0), default=128, show_default=True)
@click.option("--rate", type=click.FloatRange(min=0, min_open=True), default=1000.0)
@click.option("--duration", type=click.FloatRange(min=0, min_open=True), default=30.0)
@click.option("--grid", "use_grid", is_flag=True, help="Run the payload x rate grid.")
@click.option("--endpoint", help="Use a running broker instead of a child one.")
@click.option("--out", type=click.Path(file_okay=False), help="Result directory.")
@with_config
def latency(
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    payload: int,
    rate: float,
    duration: float,
    use_grid: bool,
    endpoint: t.Optional[str],
    out: t.Optional[str],
) -> int:
    """Delivery latency of one publisher and one subscriber."""
    out = out or config.bench.out_dir
    configs = grid(PAYLOADS, RATES) if use_grid else [(payload, rate)]
    invalid = []
    for run_payload, run_rate in configs:
        result = run(
            run_latency(
                config,
                payload=run_payload,
                rate=run_rate,
                duration=duration,
                endpoint=endpoint,
                config_path=config_path,
                strict=False,
            )
        )
        samples_path, summary_path = write_latency(out, result)
        click.echo(f"{samples_path} {summary_path}")
        if not result.valid:
            invalid.append(result)
    for result in invalid:
        click.echo(
            f"Invalid run: {result.payload_bytes} B at {result.target_rate:g} msg/s"
            f" achieved {result.achieved_rate:.1f} msg/s",
            err=True,
        )
    return ExitCode.RUNTIME if invalid else ExitCode.OK


@bench.command()
@click.option("--rate", type=click.FloatRange(min=0, min_open=True), default=1000.0)
@click.option("--payload", type=click.IntRange(min=0), default=128, show_default=True)
@click.option("--kill-after", type=click.FloatRange(min=0), default=10.0)
@click.option("--downtime", type=click.FloatRange(min=0), default=5.0)
@click.option("--settle", type=click.FloatRange(min=0), default=10.0)
@click.option("--listen", help="Address of the broker child.")
@click.option("--out", type=click.Path(file_okay=False), help="Result directory.")
@with_config
def recovery(
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    rate: float,
    payload: int,
    kill_after: float,
    downtime: float,
    settle: float,
    listen: t.Optional[str],
    out: t.Optional[str],
) -> int:
    """Throughput trace across a broker crash and cold restart."""
    trace = run(
        run_recovery(
            config,
            rate=rate,
            payload=payload,
            kill_after_s=kill_after,
            downtime_s=downtime,
            settle_s=settle,
            listen=listen,
            config_path=config_path,
        )
    )
    bins_path, trace_path = write_trace(
        out or config.bench.out_dir,
        trace,
        {
            "rate": rate,
            "payload_bytes": payload,
            "kill_after_s": kill_after,
            "downtime_s": downtime,
            "settle_s": settle,
            "bin_width_s": trace.bin_width_s,
        },
    )
    click.echo(f"{bins_path} {trace_path}")
    if trace.recovered_ts is None or not trace.converged:
        return ExitCode.VERIFICATION
    if not trace.covers_downtime():
        logger.warning(
            "Empty bins do not span the downtime",
            extra={"data": {"zero_intervals": trace.zero_intervals()}},
        )
        return ExitCode.VERIFICATION
    return ExitCode.OK


@bench.command(hidden=True)
@click.option("--endpoint", required=True)
@click.option("--channel", default=BENCH_CHANNEL)
@click.option("--node-id", required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@with_config
def subscribe(
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    endpoint: str,
    channel: str,
    node_id: str,
    out: str,
) -> int:
    """Record deliveries until SIGTERM. Prints a line once registered."""

    async def main() -> int:
        stop = asyncio.Event()
        return await run_until_stopped(
            record_deliveries(
                config.client,
                endpoint=endpoint,
                channel=channel,
                node_id=node_id,
                out=out,
                stop=stop,
                on_ready=lambda: click.echo(READY_LINE.decode()),
            ),
            stop=stop.set,
        )

    run(main())
    return ExitCode.OK


@cli.group()
def records() -> None:
    """Inspect records regions."""


@records.command()
@click.option("--region", type=click.Path(dir_okay=False), help="Region file.")
@with_config
def dump(
    *, config: AnchorConfig, config_path: t.Optional[str], region: t.Optional[str]
) -> int:
    """Print a consistent snapshot of every group as JSON."""
    with open_region(
        region or config.records.region_path, max_retries=config.records.max_retries
    ) as handle:
        snapshot = handle.read_snapshot()
    echo_json(
        {
            "schema_version": snapshot.schema_version,
            "version_counter": snapshot.version_counter,
            "counters": snapshot.counters,
            "groups": snapshot.as_lists(),
        },
        indent=2,
        sort_keys=True,
    )
    return ExitCode.OK


@cli.group(name="log")
def log_group() -> None:
    """Replay logs."""


@log_group.command()
@click.option("--path", type=click.Path(dir_okay=False), help="Executor log.")
@click.option(
    "--verify-against",
    type=click.Path(exists=True, dir_okay=False),
    help="Replay with the demo settings of this configuration file.",
)
@click.option(
    "--reinference/--no-reinference",
    default=True,
    show_default=True,
    help="Recompute commands from their recorded policy input.",
)
@with_config
def replay(
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    path: t.Optional[str],
    verify_against: t.Optional[str],
    reinference: bool,
) -> int:
    """Re-execute recorded commands and compare the events. Exits 4 on divergence."""
    options = config.demo
    if verify_against:
        options = load_config(verify_against).c.demo
    report = replay_run(path or log_path(config.demo), options, reinference=reinference)
    divergence = report.divergence
    echo_json(
        {
            "commands": report.commands,
            "events": len(report.events),
            "identical": report.identical,
            "corrupt_tail": report.corrupt_tail,
            "divergence": None
            if divergence is None
            else {
                "cycle": divergence.cycle,
                "project_id": divergence.project_id,
                "kind": divergence.kind,
            },
        }
    )
    report.check()
    return ExitCode.OK


@cli.command()
@click.option("--endpoint", help="Broker endpoint.")
@click.option("--timeout", type=float, default=STATS_TIMEOUT, show_default=True)
@with_config
def stats(
    *,
    config: AnchorConfig,
    config_path: t.Optional[str],
    endpoint: t.Optional[str],
    timeout: float,
) -> int:
    """Print broker stats as JSON lines: the broker, then one line per node."""

    async def main() -> dict:
        client = BusClient(
            config.client,
            node_id=f"{config.client.node_id}-stats",
            endpoint=endpoint,
        )
        async with client:
            try:
                await client.wait_registered(timeout)
                return await client.request_stats(timeout)
            except asyncio.TimeoutError:
                raise AnchorError(f"No stats from {client.endpoint}") from None

    dump = run(main())
    nodes = dump.pop("nodes", [])
    echo_json(dump, sort_keys=True)
    for node in nodes:
        echo_json(node, sort_keys=True)
    return ExitCode.OK


def run_cli(args: t.Optional[t.Sequence[str]] = None) -> int:
    """Run `anchorctl`, mapping failures to exit codes."""
    try:
        result = cli.main(
            args=list(args) if args is not None else None,
            prog_name="anchorctl",
            standalone_mode=False,
        )
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return ExitCode.USAGE
    except click.ClickException as e:
        e.show()
        return ExitCode.USAGE
    except AnchorError as e:
        logger.debug("Command failed", exc_info=True)
        click.echo(f"Error: {e}", err=True)
        return e.exit_code
    return int(result or ExitCode.OK)


def main() -> None:
    sys.exit(run_cli())
