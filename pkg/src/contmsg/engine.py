"""The continuation engine: continuation requests, attach, test/wait, free.

A continuation is a callback plus context attached to one or more in-flight
operations; it becomes eligible when the last member operation completes.
Continuation requests (CRs) aggregate registered continuations, drive
progress when tested or waited on, and follow a small state machine:

    INACTIVE            fresh, nothing registered yet
    ACTIVE_REFERENCED   at least one continuation registered and not executed
    ACTIVE_IDLE         drained, but no completion call has observed it yet
    COMPLETE            a completion call observed the drained CR

Dispatch rules:

* Eligible continuations of non-poll_only CRs may be executed by any agent
  inside a library call (isend/irecv/start/cancel/poll/test/wait/tick),
  except ``attach``, which never executes continuations.
* poll_only CRs execute callbacks only inside their own test()/wait().
* exec_context=APPLICATION keeps execution off the dedicated progress agent.
* A continuation body never executes further continuations (no nesting).
* Once a CR is freed, its remaining queued continuations become drainable by
  any library entry regardless of poll_only/exec_context, so the CR can be
  released.

Thread safety: attach may be called concurrently from any number of agents
on one CR; test/wait demand one tester at a time (re-entry from the same
agent is permitted, concurrent testers are rejected when detected).

Lock order: an endpoint matching lock is never held while taking a CR lock
that could itself wait on an endpoint lock; CR locks never nest.
"""

from __future__ import annotations

import enum
import itertools
import threading
from collections import deque
from dataclasses import dataclass

from . import errors
from .core import (EMPTY_STATUS, ExecContext, InfoConfig, OpHandle, OpState,
                   info_config_new)
from .tcp import TcpFabric, parse_roster
from .transport import LoopbackFabric, op_test

_cr_ids = itertools.count(1)


class CRState(enum.Enum):
    INACTIVE = "inactive"
    ACTIVE_REFERENCED = "active_referenced"
    ACTIVE_IDLE = "active_idle"
    COMPLETE = "complete"


class CREvent(enum.Enum):
    REGISTER = "register"
    DEREGISTER_MORE = "deregister_more"
    DEREGISTER_LAST = "deregister_last"
    COMPLETION_CALL = "completion_call"


#: The legal transition relation.  Everything not listed is a non-edge and
#: is rejected by ``ContinuationRequest._apply``.
CR_EDGES: dict[tuple[CRState, CREvent], CRState] = {
    (CRState.INACTIVE, CREvent.REGISTER): CRState.ACTIVE_REFERENCED,
    (CRState.ACTIVE_IDLE, CREvent.REGISTER): CRState.ACTIVE_REFERENCED,
    (CRState.COMPLETE, CREvent.REGISTER): CRState.ACTIVE_REFERENCED,
    (CRState.ACTIVE_REFERENCED, CREvent.REGISTER): CRState.ACTIVE_REFERENCED,
    (CRState.ACTIVE_REFERENCED, CREvent.DEREGISTER_MORE): CRState.ACTIVE_REFERENCED,
    (CRState.ACTIVE_REFERENCED, CREvent.DEREGISTER_LAST): CRState.ACTIVE_IDLE,
    (CRState.INACTIVE, CREvent.COMPLETION_CALL): CRState.COMPLETE,
    (CRState.ACTIVE_IDLE, CREvent.COMPLETION_CALL): CRState.COMPLETE,
    (CRState.COMPLETE, CREvent.COMPLETION_CALL): CRState.COMPLETE,
    (CRState.ACTIVE_REFERENCED, CREvent.COMPLETION_CALL): CRState.ACTIVE_REFERENCED,
}


class _Group:
    """One registered continuation: callback, context, status slots, and the
    count of member operations still outstanding (+1 registration guard held
    by attach until all operands are wired up)."""

    __slots__ = ("callback", "context", "statuses", "cr", "_remaining", "_lock")

    def __init__(self, callback, context, statuses, cr, remaining):
        self.callback = callback
        self.context = context
        self.statuses = statuses
        self.cr = cr
        self._remaining = remaining
        self._lock = threading.Lock()

    def _dec(self) -> bool:
        with self._lock:
            self._remaining -= 1
            return self._remaining == 0


@dataclass
class CrCounters:
    """Introspection counters, for harnesses and tests."""

    registered: int = 0
    enqueued: int = 0
    executed_inline: int = 0
    executed_deferred: int = 0
    immediate_completions: int = 0

    @property
    def executed(self) -> int:
        return self.executed_inline + self.executed_deferred


class _AgentState(threading.local):
    """Per-agent continuation context: nesting depth and progress role."""

    def __init__(self):
        self.depth = 0
        self.is_progress = False
        self.testing: set[int] = set()


class ContinuationRequest:
    """Aggregates continuations; drives progress via test()/wait()."""

    def __init__(self, runtime: "Runtime", config: InfoConfig):
        self.id = next(_cr_ids)
        self.config = config
        self._rt = runtime
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._state = CRState.INACTIVE
        self._registered = 0
        self._ready: deque[_Group] = deque()
        self._chained: list[tuple[_Group, int]] = []
        self._free_pending = False
        self._destroyed = False
        self._in_global = False
        self._counters = CrCounters()
        self._tester_ident = None
        self._tester_depth = 0

    # -- public surface ----------------------------------------------------

    @property
    def state(self) -> CRState:
        return self._state

    @property
    def counters(self) -> CrCounters:
        return self._counters

    @property
    def free_pending(self) -> bool:
        return self._free_pending

    def attach(self, ops, callback, context=None, statuses=None) -> bool:
        """Attach a continuation to one or more operands.

        ``ops`` is an operation handle, a continuation request, or a list
        mixing both.  Returns True iff every operand was already complete and
        the callback will never be invoked by the engine (immediate
        completion); with enqueue_complete the group is queued instead and
        the flag is always False.

        ``statuses`` is an optional caller-owned list (one slot per operand)
        filled before the callback runs — or before this call returns on the
        immediate path.  A continuation-request operand receives an empty
        status.  Non-persistent operation handles are consumed by a
        successful attach, whether or not completion was immediate.
        """
        return self._rt._attach(self, ops, callback, context, statuses)

    def test(self) -> bool:
        """Poll progress, run up to max_poll ready callbacks, report drain.

        Returns True iff no registered continuations remain afterward, in
        which case the CR transitions to COMPLETE.
        """
        self._require_usable()
        rt = self._rt
        agent = rt._agent
        self._claim_tester()
        try:
            rt._poll_all()
            if agent.depth == 0 and self._may_execute_here(agent):
                limit = None if self.config.max_poll == -1 else self.config.max_poll
                rt._run_ready(self, limit, deferred=True)
            flag, chained = self._completion_check()
            if chained:
                rt._fire_chained(chained)
            rt._drain()
            return flag
        finally:
            self._release_tester()

    def wait(self) -> None:
        """Block until every registered continuation has executed.

        Continuations registered while waiting (by any agent) are honored if
        they land before the termination check succeeds.  The loop drives
        transport progress itself, with a small backoff while idle.
        """
        self._require_usable()
        rt = self._rt
        agent = rt._agent
        self._claim_tester()
        try:
            backoff = 5e-5
            may_exec = agent.depth == 0 and self._may_execute_here(agent)
            while True:
                rt._poll_all()
                if may_exec:
                    rt._run_ready(self, None, deferred=True)
                rt._drain()
                chained = None
                done = False
                with self._lock:
                    if self._registered == 0:
                        self._apply(CREvent.COMPLETION_CALL)
                        chained, self._chained = self._chained, []
                        done = True
                    elif not self._ready or not may_exec:
                        self._cond.wait(timeout=backoff)
                        backoff = min(backoff * 2, 1e-3)
                if done:
                    if chained:
                        rt._fire_chained(chained)
                    rt._drain()
                    return
        finally:
            self._release_tester()

    def free(self) -> None:
        """Forbid new registrations; destroy once drained.

        Remaining queued continuations still execute (via any library entry);
        the CR is destroyed when none remain.
        """
        push_global = False
        with self._lock:
            if self._free_pending:
                raise errors.DoubleFree(f"CR {self.id} already freed")
            self._free_pending = True
            if self._registered == 0 and not self._ready:
                self._destroyed = True
            elif self._ready and not self._in_global:
                self._in_global = True
                push_global = True
        if push_global:
            self._rt._ready_crs.append(self)

    # -- internals -----------------------------------------------------------

    def _require_usable(self):
        if self._destroyed or self._free_pending:
            raise errors.FreedRequest(f"CR {self.id} has been freed")

    def _may_execute_here(self, agent) -> bool:
        return not (agent.is_progress
                    and self.config.exec_context is ExecContext.APPLICATION)

    def _claim_tester(self):
        ident = threading.get_ident()
        with self._lock:
            if self._tester_ident is not None and self._tester_ident != ident:
                raise errors.ConcurrentCompletionCall(
                    f"CR {self.id} is already being tested by another agent")
            self._tester_ident = ident
            self._tester_depth += 1
        self._rt._agent.testing.add(self.id)

    def _release_tester(self):
        with self._lock:
            self._tester_depth -= 1
            if self._tester_depth == 0:
                self._tester_ident = None
                self._rt._agent.testing.discard(self.id)

    def _completion_check(self):
        with self._lock:
            flag = self._registered == 0
            self._apply(CREvent.COMPLETION_CALL)
            chained = None
            if flag:
                chained, self._chained = self._chained, []
            return flag, chained

    def _register_group(self, group: _Group):
        with self._lock:
            if self._free_pending or self._destroyed:
                raise errors.FreedRequest(f"CR {self.id} has been freed")
            self._registered += 1
            self._counters.registered += 1
            self._apply(CREvent.REGISTER)

    def _on_executed(self, deferred: bool):
        with self._lock:
            self._registered -= 1
            if deferred:
                self._counters.executed_deferred += 1
            else:
                self._counters.executed_inline += 1
            if self._registered == 0:
                self._apply(CREvent.DEREGISTER_LAST)
                if self._free_pending and not self._ready:
                    self._destroyed = True
            else:
                self._apply(CREvent.DEREGISTER_MORE)
            self._cond.notify_all()

    def _apply(self, event: CREvent):
        new = CR_EDGES.get((self._state, event))
        if new is None:
            raise errors.IllegalTransition(
                f"CR {self.id}: no edge from {self._state.value} on {event.value}")
        old, self._state = self._state, new
        listener = self._rt._transition_listener
        if listener is not None:
            listener(self, old, event, new)

    def __repr__(self):  # pragma: no cover
        return f"<CR {self.id} {self._state.value} registered={self._registered}>"


class Runtime:
    """Owns the world: fabric, endpoints, agents, and continuation dispatch."""

    def __init__(self, world_size: int, transport: str = "loopback",
                 roster: str | None = None):
        if world_size < 1:
            raise ValueError("world_size must be >= 1")
        if transport == "loopback":
            self._fabric = LoopbackFabric(world_size)
        elif transport == "tcp":
            entries = None
            if roster is not None:
                entries = parse_roster(roster, world_size)
            self._fabric = TcpFabric(world_size, entries)
        else:
            raise ValueError(f"unknown transport {transport!r}")
        self.world_size = world_size
        self.transport = transport
        self.endpoints = self._fabric.endpoints
        for ep in self.endpoints:
            ep._events_sink = self._on_events
            ep._after_call = self._drain
        self._agent = _AgentState()
        self._ready_crs: deque[ContinuationRequest] = deque()
        self._transition_listener = None
        self._nesting_violations = 0
        self._max_depth_seen = 0
        self._progress_thread = None
        self._progress_stop = threading.Event()

    # -- lifecycle ----------------------------------------------------------

    def endpoint(self, rank: int):
        return self.endpoints[rank]

    def continue_init(self, config=None) -> ContinuationRequest:
        """Create a continuation request with the given behavior controls."""
        if config is None:
            config = InfoConfig()
        elif isinstance(config, dict):
            config = info_config_new(config)
        elif not isinstance(config, InfoConfig):
            raise TypeError(f"config must be InfoConfig or dict, got {type(config)}")
        return ContinuationRequest(self, config)

    def close(self):
        self.stop_progress_agent()
        self._fabric.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- progress -------------------------------------------------------------

    def progress_tick(self) -> int:
        """One poll pass over every endpoint plus continuation dispatch."""
        self._poll_all()
        return self._drain()

    def start_progress_agent(self, interval: float = 5e-5):
        """Spawn a dedicated progress agent ticking at the given interval."""
        if self._progress_thread is not None:
            return
        self._progress_stop.clear()

        def _loop():
            self._agent.is_progress = True
            while not self._progress_stop.is_set():
                self.progress_tick()
                self._progress_stop.wait(interval)

        self._progress_thread = threading.Thread(
            target=_loop, name="contmsg-progress", daemon=True)
        self._progress_thread.start()

    def stop_progress_agent(self):
        if self._progress_thread is None:
            return
        self._progress_stop.set()
        self._progress_thread.join()
        self._progress_thread = None

    def op_test(self, op: OpHandle):
        return op_test(op)

    # -- introspection ----------------------------------------------------------

    @property
    def nesting_violations(self) -> int:
        return self._nesting_violations

    @property
    def max_callback_depth(self) -> int:
        return self._max_depth_seen

    def set_transition_listener(self, fn):
        """Install fn(cr, old_state, event, new_state); called under the CR
        lock, so keep it cheap and reentrancy-free."""
        self._transition_listener = fn

    # -- attach ------------------------------------------------------------------

    def _attach(self, cr, ops, callback, context, statuses) -> bool:
        if isinstance(ops, (OpHandle, ContinuationRequest)):
            ops = [ops]
        else:
            ops = list(ops)
        if not ops:
            raise ValueError("attach requires at least one operand")
        if statuses is not None and len(statuses) != len(ops):
            raise ValueError(
                f"statuses has {len(statuses)} slots for {len(ops)} operands")
        cr._require_usable()
        self._validate_operands(cr, ops)

        group = _Group(callback, context, statuses, cr, len(ops) + 1)
        registered = False
        for i, ref in enumerate(ops):
            if isinstance(ref, ContinuationRequest):
                registered = self._attach_cr_operand(cr, group, i, ref, registered)
            else:
                registered = self._attach_op_operand(cr, group, i, ref, registered)

        zero = group._dec()  # drop the registration guard
        if not registered:
            # Every operand was complete when inspected.
            if cr.config.enqueue_complete:
                cr._register_group(group)
                self._enqueue_ready(group)
                return False
            with cr._lock:
                cr._counters.immediate_completions += 1
            return True
        if zero:
            self._enqueue_ready(group)
        return False

    def _validate_operands(self, cr, ops):
        if len({id(ref) for ref in ops}) != len(ops):
            raise errors.AlreadyAttached("duplicate operand in attach")
        for ref in ops:
            if isinstance(ref, ContinuationRequest):
                if ref is cr:
                    raise errors.SelfChain(
                        f"CR {cr.id} cannot be an operand of its own attach")
                if ref._destroyed or ref._free_pending:
                    raise errors.FreedRequest(f"operand CR {ref.id} has been freed")
            elif isinstance(ref, OpHandle):
                with ref.endpoint._lock:
                    if ref.state is OpState.CONSUMED:
                        raise errors.ConsumedHandle(
                            f"handle {ref.id} was consumed by a previous attach")
                    if ref.state is OpState.INACTIVE:
                        raise errors.NotActive(f"handle {ref.id} has not been started")
                    if ref._slot is not None:
                        raise errors.AlreadyAttached(
                            f"handle {ref.id} already has a continuation")
            else:
                raise TypeError(f"operand must be OpHandle or ContinuationRequest, "
                                f"got {type(ref)}")

    def _attach_cr_operand(self, cr, group, i, ref, registered) -> bool:
        if not registered:
            with ref._lock:
                if ref._state is CRState.COMPLETE:
                    self._write_status(group, i, EMPTY_STATUS)
                    group._dec()
                    return registered
            cr._register_group(group)
            registered = True
        with ref._lock:
            if ref._state is CRState.COMPLETE:
                self._write_status(group, i, EMPTY_STATUS)
                group._dec()
            else:
                ref._chained.append((group, i))
        return registered

    def _attach_op_operand(self, cr, group, i, ref, registered) -> bool:
        ep = ref.endpoint
        if not registered:
            with ep._lock:
                if ref._done:
                    self._consume_done(group, i, ref)
                    return registered
            cr._register_group(group)
            registered = True
        with ep._lock:
            if ref._done:
                self._consume_done(group, i, ref)
            else:
                if ref._slot is not None:
                    raise errors.AlreadyAttached(
                        f"handle {ref.id} already has a continuation")
                ref._slot = (group, i)
                if not ref.persistent:
                    ref.state = OpState.CONSUMED
        return registered

    def _consume_done(self, group, i, ref):
        self._write_status(group, i, ref._status)
        group._dec()
        if not ref.persistent:
            ref.state = OpState.CONSUMED

    @staticmethod
    def _write_status(group, i, status):
        if group.statuses is not None:
            group.statuses[i] = status

    # -- dispatch ---------------------------------------------------------------

    def _on_events(self, events):
        # One event per member-operation completion; statuses were written
        # under the endpoint lock before the event was emitted.
        for group in events:
            if group._dec():
                self._enqueue_ready(group)

    def _enqueue_ready(self, group: _Group):
        cr = group.cr
        with cr._lock:
            cr._ready.append(group)
            cr._counters.enqueued += 1
            drainable = not cr.config.poll_only or cr._free_pending
            if drainable and not cr._in_global:
                cr._in_global = True
                self._ready_crs.append(cr)
            cr._cond.notify_all()

    def _fire_chained(self, entries):
        for group, idx in entries:
            self._write_status(group, idx, EMPTY_STATUS)
            if group._dec():
                self._enqueue_ready(group)

    def _poll_all(self):
        for ep in self.endpoints:
            if ep._poll_mutex.acquire(blocking=False):
                try:
                    completed, events = self._fabric.poll(ep)
                finally:
                    ep._poll_mutex.release()
                if events:
                    self._on_events(events)

    def _drain(self) -> int:
        """Execute eligible queued continuations on the calling agent."""
        agent = self._agent
        if agent.depth > 0:
            return 0
        executed = 0
        for _ in range(len(self._ready_crs)):
            try:
                cr = self._ready_crs.popleft()
            except IndexError:
                break
            freed = cr._free_pending
            if cr.id in agent.testing and not freed:
                self._ready_crs.append(cr)
                continue
            if not freed and agent.is_progress \
                    and cr.config.exec_context is ExecContext.APPLICATION:
                self._ready_crs.append(cr)
                continue
            executed += self._run_ready(cr, None, deferred=False)
            with cr._lock:
                if cr._ready:
                    self._ready_crs.append(cr)
                else:
                    cr._in_global = False
        return executed

    def _run_ready(self, cr, limit, deferred: bool) -> int:
        n = 0
        while limit is None or n < limit:
            with cr._lock:
                if not cr._ready:
                    break
                group = cr._ready.popleft()
            self._execute(group, deferred)
            n += 1
        return n

    def _execute(self, group: _Group, deferred: bool):
        agent = self._agent
        agent.depth += 1
        if agent.depth > self._max_depth_seen:
            self._max_depth_seen = agent.depth
        if agent.depth > 1:
            self._nesting_violations += 1
        try:
            group.callback(group.statuses, group.context)
        finally:
            agent.depth -= 1
        group.cr._on_executed(deferred)
