import time

import pytest

from skinlab.control.pool import pairwise_reduce, run_tasks, run_tasks_sync
from skinlab.errors import FitError


async def test_run_tasks_keeps_input_order():
    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    outcomes = await run_tasks(slow_square, range(5), jobs=5)
    assert [o.index for o in outcomes] == [0, 1, 2, 3, 4]
    assert [o.value for o in outcomes] == [0, 1, 4, 9, 16]
    assert all(o.ok for o in outcomes)


async def test_run_tasks_captures_errors_per_item():
    def fn(x):
        if x == 1:
            raise FitError("too few points", op="fit")
        if x == 2:
            raise ValueError("boom")
        return x

    outcomes = await run_tasks(fn, [0, 1, 2], jobs=2, op="row")
    assert outcomes[0].ok and outcomes[0].value == 0
    assert outcomes[1].error == {"code": "fit_error", "message": "too few points", "op": "fit"}
    assert outcomes[2].error["code"] == "task_failed"
    assert outcomes[2].error["op"] == "row"
    assert "ValueError" in outcomes[2].error["message"]


def test_run_tasks_sync_single_worker():
    outcomes = run_tasks_sync(lambda s: s.upper(), ["a", "b"], jobs=1)
    assert [o.value for o in outcomes] == ["A", "B"]


def test_pairwise_reduce_is_ordered():
    assert pairwise_reduce(["a", "b", "c", "d", "e"], lambda x, y: f"({x}{y})") == "(((ab)(cd))e)"
    assert pairwise_reduce([7], lambda x, y: x + y) == 7
    with pytest.raises(ValueError):
        pairwise_reduce([], lambda x, y: x + y)
