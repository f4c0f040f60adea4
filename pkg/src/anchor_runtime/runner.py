import typing as t

import asyncio
import signal
from collections.abc import Coroutine

from anchor_runtime.utils.log import getLogger

T = t.TypeVar("T")

TERM_SIGNALS = ("SIGINT", "SIGTERM")


def set_term_handler(handler: t.Callable[[], t.Any]) -> None:
    loop = asyncio.get_running_loop()
    for signame in TERM_SIGNALS:
        loop.add_signal_handler(getattr(signal, signame), handler)


def unset_term_handler() -> None:
    loop = asyncio.get_running_loop()
    for signame in TERM_SIGNALS:
        loop.remove_signal_handler(getattr(signal, signame))


async def run_until_stopped(
    main: Coroutine[t.Any, t.Any, T], *, stop: t.Callable[[], t.Any]
) -> T:
    """Run `main`, calling `stop` once on SIGINT or SIGTERM."""
    stopped = False

    def on_term() -> None:
        nonlocal stopped
        if stopped:
            return
        stopped = True
        stop()

    set_term_handler(on_term)
    try:
        return await main
    finally:
        unset_term_handler()


def run(main: Coroutine[t.Any, t.Any, T]) -> T:
    logger = getLogger(__name__)
    loop = asyncio.new_event_loop()
    try:
        result = loop.run_until_complete(main)
        if tasks := asyncio.all_tasks(loop):
            logger.error("Leftover tasks: %s", tasks)
        return result
    finally:
        loop.run_until_complete(loop.shutdown_asyncgens())
        loop.close()
