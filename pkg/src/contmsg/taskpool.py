"""A small task runtime with detached tasks and registrable polling services.

A task's dependencies release only when its body has returned AND its event
counter is back to zero, so a communication continuation can hold a task's
successors back until the matching operations complete: increase the counter
in the body, attach a continuation that decreases it, and the successors run
whenever the later of the two happens.

Workers invoke registered polling services after every task completion and
on a short idle backoff, which is how the message runtime gets progressed
from inside the pool.
"""

from __future__ import annotations

import itertools
import logging
import os
import threading
import time
from collections import deque

from . import errors
from .core import OpHandle

log = logging.getLogger(__name__)

_task_ids = itertools.count(1)

_IDLE_BACKOFF = 50e-6


class Task:
    """One unit of work with an event counter gating dependency release."""

    __slots__ = ("id", "body", "_pool", "_lock", "_events", "_body_done",
                 "_released", "_successors", "_pending_gates", "_queued")

    def __init__(self, pool, body):
        self.id = next(_task_ids)
        self.body = body
        self._pool = pool
        self._lock = threading.Lock()
        self._events = 0
        self._body_done = False
        self._released = False
        self._successors: list[Task] = []
        self._pending_gates = 0
        self._queued = False

    @property
    def released(self) -> bool:
        return self._released

    def __repr__(self):  # pragma: no cover
        return f"<Task {self.id} released={self._released}>"


class PollingService:
    """A function the pool invokes periodically; return True to stay
    registered, False to be removed."""

    __slots__ = ("name", "fn", "registered")

    def __init__(self, name: str, fn):
        self.name = name
        self.fn = fn
        self.registered = False


class TaskPool:
    """FIFO task pool with detached-task events and polling services."""

    def __init__(self, workers: int | None = None):
        self._workers_n = workers if workers is not None else (os.cpu_count() or 2)
        self._cond = threading.Condition()
        self._ready: deque[Task] = deque()
        self._services: dict[str, PollingService] = {}
        self._services_lock = threading.Lock()
        self._stop = False
        self._unfinished = 0
        self._tls = threading.local()
        self._threads = [
            threading.Thread(target=self._worker, name=f"contmsg-worker-{i}",
                             daemon=True)
            for i in range(self._workers_n)
        ]
        for t in self._threads:
            t.start()

    # -- tasks ---------------------------------------------------------------

    def spawn(self, body, gated_on=()) -> Task:
        """Create a task, runnable once every gating task has released."""
        task = Task(self, body)
        with self._cond:
            self._unfinished += 1
        gates = 0
        for g in gated_on:
            with g._lock:
                if not g._released:
                    g._successors.append(task)
                    gates += 1
        with task._lock:
            task._pending_gates += gates
            runnable = task._pending_gates == 0 and not task._queued
            if runnable:
                task._queued = True
        if runnable:
            self._enqueue(task)
        return task

    def event_increase(self, task: Task, n: int = 1) -> None:
        """Detach: raise the task's event counter (only from its own body)."""
        if getattr(self._tls, "current", None) is not task:
            raise errors.EventBindingError(
                f"task {task.id}: events may only be bound from the task's own body")
        with task._lock:
            task._events += n

    def event_decrease(self, task: Task, n: int = 1) -> None:
        """Fulfil events; dependencies release at zero after the body ends."""
        with task._lock:
            if task._events < n:
                raise errors.EventUnderflow(
                    f"task {task.id}: counter {task._events} cannot drop by {n}")
            task._events -= n
            release = self._release_check(task)
        if release:
            self._do_release(task)

    # -- polling services -----------------------------------------------------

    def register_polling(self, svc: PollingService) -> None:
        with self._services_lock:
            self._services[svc.name] = svc
            svc.registered = True

    def unregister_polling(self, name: str) -> None:
        """Remove a service by name; idempotent."""
        with self._services_lock:
            svc = self._services.pop(name, None)
            if svc is not None:
                svc.registered = False

    def run_services_once(self) -> None:
        with self._services_lock:
            services = list(self._services.values())
        for svc in services:
            keep = True
            try:
                keep = bool(svc.fn())
            except Exception:
                log.exception("polling service %r raised; removing it", svc.name)
                keep = False
            if not keep:
                self.unregister_polling(svc.name)

    # -- lifecycle --------------------------------------------------------------

    def wait_all(self, timeout: float | None = None) -> bool:
        """Block until every spawned body has run; False on timeout."""
        deadline = None if timeout is None else (time.monotonic() + timeout)
        with self._cond:
            while self._unfinished > 0:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._cond.wait(timeout=remaining if remaining is not None else 0.1)
        return True

    def shutdown(self) -> None:
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        for t in self._threads:
            t.join()

    # -- internals ------------------------------------------------------------

    def _enqueue(self, task: Task):
        with self._cond:
            self._ready.append(task)
            self._cond.notify()

    def _worker(self):
        while True:
            task = None
            with self._cond:
                if self._stop and not self._ready:
                    return
                if self._ready:
                    task = self._ready.popleft()
                else:
                    self._cond.wait(timeout=_IDLE_BACKOFF)
            if task is None:
                self.run_services_once()
                continue
            self._tls.current = task
            try:
                task.body()
            except Exception:
                log.exception("task %d body raised", task.id)
            finally:
                self._tls.current = None
            with task._lock:
                task._body_done = True
                release = self._release_check(task)
            if release:
                self._do_release(task)
            with self._cond:
                self._unfinished -= 1
                self._cond.notify_all()
            self.run_services_once()

    @staticmethod
    def _release_check(task: Task) -> bool:
        # Caller holds task._lock.
        if task._body_done and task._events == 0 and not task._released:
            task._released = True
            return True
        return False

    def _do_release(self, task: Task):
        with task._lock:
            successors = list(task._successors)
            task._successors.clear()
        for s in successors:
            with s._lock:
                s._pending_gates -= 1
                runnable = (s._pending_gates == 0 and not s._queued)
                if runnable:
                    s._queued = True
            if runnable:
                self._enqueue(s)


#: Test injection point: called between a deferred attach and the park loop,
#: to force the signal-before-park interleaving.
_park_gap_hook = None


def blocking_wait(ops, cr, pool: TaskPool | None = None):
    """Attach an unparking continuation and block until it fires.

    Returns the status (or list of statuses) of the awaited operation(s).
    Returns immediately when the attach reports immediate completion.  The
    guarded done-flag makes the park immune to lost wakeups: a signal that
    lands between attach and park is observed before waiting.  While parked,
    the caller runs the pool's polling services (when a pool is given) so a
    worker that blocks here keeps the runtime progressing.
    """
    single = isinstance(ops, OpHandle)
    op_list = [ops] if single else list(ops)
    statuses = [None] * len(op_list)
    cond = threading.Condition()
    state = {"done": False}

    def _unpark(_statuses, _ctx):
        with cond:
            state["done"] = True
            cond.notify_all()

    flag = cr.attach(op_list, _unpark, statuses=statuses)
    if flag:
        return statuses[0] if single else statuses
    hook = _park_gap_hook
    if hook is not None:
        hook()
    while True:
        with cond:
            if state["done"]:
                break
            cond.wait(timeout=5e-4)
            if state["done"]:
                break
        if pool is not None:
            pool.run_services_once()
    return statuses[0] if single else statuses
