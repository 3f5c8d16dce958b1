"""Non-blocking point-to-point messaging with posted-receive matching.

An :class:`Endpoint` owns the matching state for one rank: posted receives,
the unexpected-message queue, and the outgoing send queue.  The actual byte
movement is delegated to a fabric (in-process loopback here, TCP in
:mod:`contmsg.tcp`); both fabrics produce identical matching behavior.

Matching is non-overtaking: for a fixed (source, tag) pair, receives match
messages in send order.  Unmatched arrivals are buffered in full (eager
protocol), so truncation is decided at match time against the receive
capacity.

Locking: every endpoint has one matching lock guarding its queues and the
state of the operations it owns.  A second mutex serializes transport polls
per endpoint.  Polls acquire other endpoints' matching locks only while not
holding their own, so lock acquisition never nests across endpoints.
"""

from __future__ import annotations

import threading
from collections import deque

from . import errors
from .core import (ANY_SOURCE, ANY_TAG, OpHandle, OpKind, OpState, Status,
                   StatusError, check_rank, check_tag)


class _Msg:
    __slots__ = ("source", "tag", "data", "seq", "claimed")

    def __init__(self, source, tag, data):
        self.source = source
        self.tag = tag
        self.data = data
        self.seq = 0
        self.claimed = False


class Endpoint:
    """One rank's view of the transport: matching queues plus an out queue."""

    def __init__(self, rank: int, world_size: int, fabric):
        self.rank = rank
        self.world_size = world_size
        self._fabric = fabric
        self._lock = threading.Lock()
        self._poll_mutex = threading.Lock()
        self._post_seq = 0
        self._arr_seq = 0
        # Receives with specific source and tag, bucketed for O(1) matching;
        # wildcard receives sit in one ordered list and are scanned.
        self._posted_exact: dict[tuple[int, int], deque] = {}
        self._posted_wild: list[OpHandle] = []
        self._unexp_exact: dict[tuple[int, int], deque] = {}
        self._unexp_all: deque = deque()
        self._out: deque = deque()
        # Wired up by the runtime: completion events go to the continuation
        # engine, and the after-call hook gives it a chance to execute ready
        # continuations on this agent.
        self._events_sink = None
        self._after_call = None

    # -- posting ---------------------------------------------------------

    def isend(self, dest: int, tag: int, payload) -> OpHandle:
        """Start a non-blocking send; the payload is copied immediately."""
        check_rank(dest, self.world_size)
        check_tag(tag, allow_any=False)
        op = OpHandle(OpKind.SEND, self, peer=dest, tag=tag, payload=bytes(payload))
        with self._lock:
            self._out.append(op)
        self._hook()
        return op

    def irecv(self, source: int, tag: int, capacity: int) -> OpHandle:
        """Post a non-blocking receive; matches buffered arrivals first."""
        self._check_recv_args(source, tag, capacity)
        op = OpHandle(OpKind.RECV, self, source_filter=source, tag=tag,
                      capacity=capacity)
        with self._lock:
            self._post_recv(op)
        self._hook()
        return op

    def send_init(self, dest: int, tag: int, payload) -> OpHandle:
        check_rank(dest, self.world_size)
        check_tag(tag, allow_any=False)
        return OpHandle(OpKind.PERSISTENT_SEND, self, peer=dest, tag=tag,
                        payload=bytes(payload))

    def recv_init(self, source: int, tag: int, capacity: int) -> OpHandle:
        self._check_recv_args(source, tag, capacity)
        return OpHandle(OpKind.PERSISTENT_RECV, self, source_filter=source,
                        tag=tag, capacity=capacity)

    def _check_recv_args(self, source, tag, capacity):
        if source != ANY_SOURCE:
            check_rank(source, self.world_size)
        check_tag(tag, allow_any=True)
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")

    # -- persistent start / cancel ---------------------------------------

    def _start(self, op: OpHandle) -> None:
        if not op.persistent:
            raise errors.NotPersistent(f"start() on non-persistent handle {op.id}")
        with self._lock:
            if op.state is OpState.ACTIVE:
                raise errors.SecondStart(f"handle {op.id} is already active")
            # COMPLETE/CANCELLED handles take the restart edge implicitly.
            op.state = OpState.ACTIVE
            op._done = False
            op._status = None
            op._slot = None
            op.data = None
            if op.kind is OpKind.PERSISTENT_RECV:
                self._post_recv(op)
            else:
                self._out.append(op)
        self._hook()

    def _cancel(self, op: OpHandle) -> None:
        if op.kind in (OpKind.SEND, OpKind.PERSISTENT_SEND):
            raise errors.CannotCancelSend(f"handle {op.id} is a send")
        if op.state is OpState.CONSUMED:
            raise errors.ConsumedHandle(f"handle {op.id} was consumed by an attach")
        events = []
        with self._lock:
            if op.state is OpState.ACTIVE and not op._done:
                self._unpost_recv(op)
                status = Status(
                    source=op.source_filter if op.source_filter >= 0 else 0,
                    tag=op.tag if op.tag >= 0 else 0,
                    count=0, cancelled=True, error=StatusError.OK)
                self._finish(op, status, cancelled=True, events=events)
            # Already matched, complete, or inactive: cancel is a no-op.
        self._dispatch(events)
        self._hook()

    # -- progressing -------------------------------------------------------

    def poll(self) -> set[int]:
        """Drain substrate events and perform matching.

        Returns the ids of every operation that finished (completed or was
        cancelled) during this call, including operations owned by other
        endpoints that a delivery completed.  Idempotent when nothing is
        pending.
        """
        with self._poll_mutex:
            completed, events = self._fabric.poll(self)
        self._dispatch(events)
        self._hook()
        return {op.id for op in completed}

    def _dispatch(self, events):
        if events and self._events_sink is not None:
            self._events_sink(events)

    def _hook(self):
        if self._after_call is not None:
            self._after_call()

    # -- matching internals (caller holds self._lock) ---------------------

    def _post_recv(self, op: OpHandle) -> None:
        msg = self._claim_unexpected(op)
        if msg is not None:
            # A receive satisfied straight from the unexpected queue cannot
            # have a continuation slot yet, so no event can arise here.
            self._finish_recv(op, msg, [])
            return
        self._post_seq += 1
        op._seq = self._post_seq
        if op.source_filter != ANY_SOURCE and op.tag != ANY_TAG:
            self._posted_exact.setdefault((op.source_filter, op.tag), deque()).append(op)
        else:
            self._posted_wild.append(op)

    def _unpost_recv(self, op: OpHandle) -> None:
        if op.source_filter != ANY_SOURCE and op.tag != ANY_TAG:
            dq = self._posted_exact.get((op.source_filter, op.tag))
            if dq is not None:
                try:
                    dq.remove(op)
                except ValueError:
                    pass
        else:
            try:
                self._posted_wild.remove(op)
            except ValueError:
                pass

    def _claim_unexpected(self, op: OpHandle):
        if op.source_filter != ANY_SOURCE and op.tag != ANY_TAG:
            dq = self._unexp_exact.get((op.source_filter, op.tag))
            while dq:
                msg = dq.popleft()
                if not msg.claimed:
                    msg.claimed = True
                    return msg
            return None
        for msg in self._unexp_all:
            if msg.claimed:
                continue
            if op.source_filter in (ANY_SOURCE, msg.source) and op.tag in (ANY_TAG, msg.tag):
                msg.claimed = True
                return msg
        return None

    def _arrival(self, msg: _Msg, completed: list, events: list) -> None:
        """Match one arriving message against posted receives, else buffer it."""
        # A posted receive stays matchable until done or cancelled even if
        # the handle itself was consumed by a continuation attachment.
        best = None
        dq = self._posted_exact.get((msg.source, msg.tag))
        if dq:
            while dq and dq[0]._done:
                dq.popleft()
            if dq:
                best = dq[0]
        for r in self._posted_wild:
            if r._done:
                continue
            if r.source_filter in (ANY_SOURCE, msg.source) and r.tag in (ANY_TAG, msg.tag):
                if best is None or r._seq < best._seq:
                    best = r
                break  # first live wildcard match is the earliest-posted one
        if best is None:
            self._arr_seq += 1
            msg.seq = self._arr_seq
            self._unexp_all.append(msg)
            self._unexp_exact.setdefault((msg.source, msg.tag), deque()).append(msg)
            self._compact_unexpected()
            return
        if best.source_filter != ANY_SOURCE and best.tag != ANY_TAG:
            self._posted_exact[(best.source_filter, best.tag)].popleft()
        else:
            self._posted_wild.remove(best)
        self._finish_recv(best, msg, events)
        completed.append(best)

    def _compact_unexpected(self):
        while self._unexp_all and self._unexp_all[0].claimed:
            self._unexp_all.popleft()

    def _finish_recv(self, op: OpHandle, msg: _Msg, events: list) -> None:
        error = StatusError.TRUNCATED if len(msg.data) > op.capacity else StatusError.OK
        op.data = msg.data[:op.capacity]
        status = Status(source=msg.source, tag=msg.tag, count=len(op.data),
                        cancelled=False, error=error)
        self._finish(op, status, cancelled=False, events=events)

    def _finish_send(self, op: OpHandle, completed: list, events: list) -> None:
        status = Status(source=self.rank, tag=op.tag, count=len(op.payload))
        self._finish(op, status, cancelled=False, events=events)
        completed.append(op)

    def _finish(self, op: OpHandle, status: Status, cancelled: bool, events: list) -> None:
        op._done = True
        op._status = status
        slot = op._slot
        if slot is not None:
            group, idx = slot
            op._slot = None
            if group.statuses is not None:
                group.statuses[idx] = status
            # The continuation is the completion notification; a persistent
            # handle is immediately ready for restart (e.g. inside the
            # callback itself).
            if op.persistent:
                op.state = OpState.INACTIVE
            events.append(group)
        elif op.state is not OpState.CONSUMED:
            op.state = OpState.CANCELLED if cancelled else OpState.COMPLETE

    def __repr__(self):  # pragma: no cover
        return f"<Endpoint rank={self.rank}/{self.world_size}>"


class LoopbackFabric:
    """N endpoints in one process; polls move queued sends to their peers."""

    def __init__(self, world_size: int):
        self.world_size = world_size
        self.endpoints = [Endpoint(r, world_size, self) for r in range(world_size)]

    def poll(self, ep: Endpoint):
        completed: list = []
        events: list = []
        with ep._lock:
            outs = list(ep._out)
            ep._out.clear()
        for sop in outs:
            dst = self.endpoints[sop.peer]
            msg = _Msg(ep.rank, sop.tag, sop.payload)
            with dst._lock:
                dst._arrival(msg, completed, events)
            with ep._lock:
                ep._finish_send(sop, completed, events)
        return completed, events

    def close(self):
        pass


def op_test(op: OpHandle):
    """Test one handle for completion, reaping it if done.

    Returns (flag, status).  A completed persistent handle returns to
    INACTIVE (ready for restart); a completed non-persistent handle is
    consumed.  Testing an inactive persistent handle reports completion with
    no status, matching persistent-request convention.
    """
    if op.state is OpState.CONSUMED:
        raise errors.ConsumedHandle(f"handle {op.id} was consumed by an attach")
    op.endpoint.poll()
    with op.endpoint._lock:
        if op.state is OpState.INACTIVE:
            return True, op._status
        if op._done:
            status = op._status
            if op.persistent:
                op.state = OpState.INACTIVE
            else:
                op.state = OpState.CONSUMED
            return True, status
        return False, None
