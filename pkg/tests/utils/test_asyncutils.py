import asyncio
from unittest.mock import Mock

from anchor_runtime.utils.asyncutils import TasksGroup
from anchor_runtime.utils.asyncutils import cancel_task
from anchor_runtime.utils.asyncutils import periodic


async def test_tasks_group_close_cancels_pending() -> None:
    done = asyncio.Event()

    async def forever() -> None:
        await asyncio.Event().wait()

    async def quick() -> None:
        done.set()

    group = TasksGroup(name="test")
    blocked = group.create_task(forever())
    group.create_task(quick())
    await done.wait()
    await asyncio.sleep(0)
    assert group.tasks == {blocked}

    await group.close()
    assert blocked.cancelled()
    assert not group.tasks


async def test_tasks_group_keeps_running_after_failure() -> None:
    async def fail() -> None:
        raise ValueError("boom")

    async with TasksGroup() as group:
        task = group.create_task(fail())
        await asyncio.wait([task])
        assert isinstance(task.exception(), ValueError)
        assert not group.tasks


async def test_cancel_task() -> None:
    started = asyncio.Event()

    async def forever() -> None:
        started.set()
        await asyncio.Event().wait()

    task = asyncio.create_task(forever())
    await started.wait()
    await cancel_task(task)
    assert task.cancelled()

    # No-ops.
    await cancel_task(task)
    await cancel_task(None)


async def test_periodic_calls_sync_and_async() -> None:
    func_mock = Mock()
    calls = asyncio.Event()

    async def tick() -> None:
        func_mock()
        if func_mock.call_count == 3:
            calls.set()

    task = asyncio.create_task(periodic(0.01, tick))
    await asyncio.wait_for(calls.wait(), 1)
    await cancel_task(task)
    assert func_mock.call_count >= 3

    sync_mock = Mock()
    task = asyncio.create_task(periodic(0.01, sync_mock))
    await asyncio.sleep(0.05)
    await cancel_task(task)
    sync_mock.assert_called()
