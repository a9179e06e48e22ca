from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass
from typing import Any, Callable, Generic, Iterable, Optional, TypeVar

from skinlab import settings
from skinlab.errors import SkinlabError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class TaskOutcome(Generic[R]):
    index: int
    ok: bool
    value: Optional[R] = None
    error: Optional[dict[str, Any]] = None


def _error_detail(exc: BaseException, op: str) -> dict[str, Any]:
    if isinstance(exc, SkinlabError):
        return exc.detail()
    return {"code": "task_failed", "message": f"{type(exc).__name__}: {exc}", "op": op}


async def run_tasks(
    fn: Callable[[T], R],
    items: Iterable[T],
    jobs: Optional[int] = None,
    op: str = "task",
) -> list[TaskOutcome[R]]:
    """Run ``fn`` over ``items`` in worker threads; outcomes keep input order."""
    items = list(items)
    sem = asyncio.Semaphore(settings.effective_jobs(jobs))

    async def one(i: int, item: T) -> TaskOutcome[R]:
        async with sem:
            try:
                value = await asyncio.to_thread(fn, item)
                return TaskOutcome(index=i, ok=True, value=value)
            except Exception as e:
                logger.warning("%s %d failed: %s", op, i, e)
                return TaskOutcome(index=i, ok=False, error=_error_detail(e, op))

    res = await asyncio.gather(*[one(i, it) for i, it in enumerate(items)], return_exceptions=False)
    return list(res)


def run_tasks_sync(
    fn: Callable[[T], R],
    items: Iterable[T],
    jobs: Optional[int] = None,
    op: str = "task",
) -> list[TaskOutcome[R]]:
    return asyncio.run(run_tasks(fn, items, jobs=jobs, op=op))


def pairwise_reduce(values: list[Any], combine: Callable[[Any, Any], Any]) -> Any:
    """Tree reduction in index order: ((v0+v1)+(v2+v3))+..."""
    if not values:
        raise ValueError("nothing to reduce")
    level = list(values)
    while len(level) > 1:
        nxt = [combine(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]
