import pytest

from optiplan.runner import JobFailure, RunnerException, SerialRunner, ThreadRunner, make_runner


def square(x):
    if x == 3:
        raise ValueError('three')
    return x * x


@pytest.mark.parametrize('runner', [SerialRunner(), ThreadRunner(4)])
def test_run_keeps_order_and_reports_failures(runner):
    with runner:
        results = runner.run(square, list(range(6)))
    assert [r for i, r in enumerate(results) if i != 3] == [0, 1, 4, 16, 25]
    assert isinstance(results[3], JobFailure)
    assert results[3].index == 3
    assert str(results[3].error) == 'three'


@pytest.mark.parametrize('runner', [SerialRunner(), ThreadRunner(2)])
def test_map_reraises(runner):
    with runner:
        with pytest.raises(ValueError):
            runner.map(square, [1, 3])


def test_thread_runner_matches_serial():
    items = list(range(50))
    with ThreadRunner(3) as threaded:
        assert threaded.map(lambda x: x * 2 + 1, items) == SerialRunner().map(lambda x: x * 2 + 1, items)


def test_thread_runner_initializes_lazily():
    runner = ThreadRunner(2)
    assert runner.map(abs, [-1, -2]) == [1, 2]
    runner.release()


def test_make_runner():
    assert isinstance(make_runner(1), SerialRunner)
    assert isinstance(make_runner(None), SerialRunner)
    assert isinstance(make_runner(4), ThreadRunner)


def test_thread_runner_needs_workers():
    with pytest.raises(RunnerException):
        ThreadRunner(0)
