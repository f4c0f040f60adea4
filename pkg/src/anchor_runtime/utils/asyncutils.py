import typing as t

import asyncio
import contextlib
from collections.abc import Awaitable
from collections.abc import Coroutine
from collections.abc import Iterable

from anchor_runtime.utils.log import getLogger


class TasksGroup:
    """Own a set of background tasks and tear them down together."""

    def __init__(
        self, tasks: Iterable[asyncio.Task] = (), *, name: t.Optional[str] = None
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.tasks = set(tasks)
        self.name = name

    def create_task(self, coroutine: Coroutine, **kwargs: t.Any) -> asyncio.Task:
        task = asyncio.create_task(coroutine, **kwargs)
        self.tasks.add(task)
        task.add_done_callback(self._on_done)
        return task

    def _on_done(self, task: asyncio.Task) -> None:
        self.tasks.discard(task)
        if not task.cancelled() and isinstance(task.exception(), Exception):
            self.logger.error("Task '%s' failed", task, exc_info=task.exception())

    async def close(self, timeout: t.Optional[float] = None) -> None:
        if not self.tasks:
            return

        # Give the chance of all task to terminate within 'timeout'.
        if timeout:
            await asyncio.wait(self.tasks, timeout=timeout)

        tasks = set(self.tasks)
        for task in tasks:
            if not task.done():
                task.cancel()

        done, pending = await asyncio.wait(tasks, timeout=timeout)
        for task in pending:
            self.logger.error("Task '%s' won't complete", task)
        self.tasks.clear()

    async def __aenter__(self) -> "TasksGroup":
        return self

    async def __aexit__(self, *exc_info: t.Any) -> None:
        await self.close()


async def cancel_task(task: t.Optional[asyncio.Task]) -> None:
    if task is None or task.done():
        return
    task.cancel()
    with contextlib.suppress(asyncio.CancelledError, Exception):
        await task


async def periodic(
    interval: float, func: t.Callable[[], t.Union[None, Awaitable[None]]]
) -> None:
    """Call `func` every `interval` seconds, anchored to the loop clock.

    Ticks that fall behind are skipped rather than bursted.
    """
    loop = asyncio.get_running_loop()
    next_tick = loop.time() + interval
    while True:
        await asyncio.sleep(max(0.0, next_tick - loop.time()))
        result = func()
        if isinstance(result, Awaitable):
            await result
        next_tick += interval
        now = loop.time()
        if next_tick < now:
            next_tick = now + interval
