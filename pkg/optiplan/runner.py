import logging
import os
from abc import ABCMeta, abstractmethod
from dataclasses import dataclass
from queue import Queue
from threading import Thread
from typing import Any, Callable, List, Optional, Sequence

from optiplan import OptiplanException

logger = logging.getLogger(__name__)


class RunnerException(OptiplanException):
    pass


@dataclass(frozen=True)
class JobFailure:
    index: int
    error: BaseException


class JobRunner(metaclass=ABCMeta):
    """
    Runs independent jobs and returns their results in submission order.
    Jobs own their inputs and random state, so every runner gives the
    same results as serial execution.
    """

    def __enter__(self):
        self.initialize()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.release()

    @abstractmethod
    def initialize(self):
        pass

    @abstractmethod
    def release(self):
        pass

    @abstractmethod
    def run(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
        """Results in item order; a failing job yields a `JobFailure` in its slot."""

    def map(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
        results = self.run(fn, items)
        for result in results:
            if isinstance(result, JobFailure):
                raise result.error
        return results


class SerialRunner(JobRunner):

    def initialize(self):
        pass

    def release(self):
        pass

    def run(self, fn, items):
        results = []
        for index, item in enumerate(items):
            try:
                results.append(fn(item))
            except Exception as err:
                logger.debug('Job %d failed: %s', index, err)
                results.append(JobFailure(index, err))
        return results


class ThreadRunner(JobRunner):

    _workers: List[Thread] = None
    _queue: Optional[Queue] = None

    def __init__(self, n_workers: int = None):
        if n_workers is not None and n_workers < 1:
            raise RunnerException('A thread runner needs at least one worker')
        self._n_workers = n_workers or min(8, os.cpu_count() or 1)
        self._workers = []
        self._queue = None

    def initialize(self):
        if self._queue is not None:
            return
        self._queue = Queue(-1)
        for _ in range(self._n_workers):
            worker = Thread(target=self._process_jobs, daemon=True)
            worker.start()
            self._workers.append(worker)

    def release(self):
        if self._queue is None:
            return
        for _ in self._workers:
            self._queue.put(None)
        for worker in self._workers:
            worker.join()
        self._workers = []
        self._queue = None

    def run(self, fn, items):
        # deferred initialization
        if self._queue is None:
            self.initialize()
        results: List[Any] = [None] * len(items)
        for index, item in enumerate(items):
            self._queue.put((index, fn, item, results))
        self._queue.join()
        return results

    def _process_jobs(self):
        while True:
            job = self._queue.get()
            if job is None:
                self._queue.task_done()
                return
            index, fn, item, results = job
            try:
                results[index] = fn(item)
            except Exception as err:
                logger.error('Error in job %d: %s', index, err)
                results[index] = JobFailure(index, err)
            finally:
                self._queue.task_done()


def make_runner(n_workers: int = 1) -> JobRunner:
    if n_workers is None or n_workers <= 1:
        return SerialRunner()
    return ThreadRunner(n_workers)
