"""Application-space completion handling, the polling alternatives.

Two managers driven by a testsome-style probe:

* :class:`ActiveSetManager` keeps a fixed-size array of requests under test
  plus a pending FIFO awaiting promotion, and throttles concurrent outgoing
  data messages.  An operation is only tested while in the active array, so
  a completed-but-pending operation is not detected until promoted — the
  structural detection delay the continuation engine avoids.
* :class:`RequestGroupManager` maps groups of requests to a single callback
  fired when the whole group has completed, polling bounded subsets of the
  active requests round-robin.

Both managers are single-driver: exactly one agent calls tick()/poll();
submissions may come from any agent through a concurrent inbox drained at
tick start.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque

from .core import OpHandle, OpState


def testsome(ops: list[OpHandle]) -> list[int]:
    """Return ascending indices of ops complete or cancelled right now.

    Performs one transport poll per involved endpoint first.  Completed
    non-persistent handles are reaped (consumed); completed persistent
    handles return to INACTIVE, ready for restart.  Statuses remain
    readable via ``op.status``.
    """
    seen = set()
    for op in ops:
        if id(op.endpoint) not in seen:
            seen.add(id(op.endpoint))
            op.endpoint.poll()
    done = []
    for i, op in enumerate(ops):
        with op.endpoint._lock:
            if op._done and op.state is not OpState.CONSUMED:
                done.append(i)
                if op.persistent:
                    op.state = OpState.INACTIVE
                else:
                    op.state = OpState.CONSUMED
    return done


class ActiveSetManager:
    """Fixed-size active request array with a pending promotion FIFO."""

    def __init__(self, capacity: int = 32, max_concurrent_out: int = 4):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.max_concurrent_out = max_concurrent_out
        self._inbox: deque = deque()
        self._inbox_lock = threading.Lock()
        self._active: list[tuple[OpHandle, object]] = []
        self._pending: deque = deque()
        self._send_queue: deque = deque()
        self._throttled: set[int] = set()
        self._out_in_flight = 0
        self.promotions = 0
        self.callbacks_fired = 0
        self.delay_histogram: dict[int, int] = {}
        self._completed_at: dict[int, int] = {}
        self._now = 0

    def post(self, op: OpHandle, callback) -> None:
        """Submit an already-started operation for completion detection."""
        with self._inbox_lock:
            self._inbox.append(("op", op, callback))

    def post_send(self, start, callback) -> None:
        """Submit a deferred send: ``start()`` is invoked (and must return
        the send handle) only once an outgoing-message slot is available."""
        with self._inbox_lock:
            self._inbox.append(("send", start, callback))

    def note_completed(self, op_id: int, tick: int) -> None:
        """Record when the transport finished an operation, for the
        detection-delay histogram (optional, driver-fed)."""
        self._completed_at[op_id] = tick

    def tick(self, now: int | None = None) -> int:
        """One driver pass: drain inbox, start throttled sends, testsome the
        active array, fire callbacks, promote from pending.  Returns the
        number of callbacks executed."""
        self._now = self._now + 1 if now is None else now
        with self._inbox_lock:
            submissions = list(self._inbox)
            self._inbox.clear()
        for kind, payload, callback in submissions:
            if kind == "send":
                self._send_queue.append((payload, callback))
            else:
                self._admit(payload, callback)
        self._start_sends()

        executed = 0
        if self._active:
            done = testsome([op for op, _ in self._active])
            done_set = set(done)
            fired = [self._active[i] for i in done]
            self._active = [e for i, e in enumerate(self._active)
                            if i not in done_set]
            for op, callback in fired:
                completed_at = self._completed_at.pop(op.id, None)
                if completed_at is not None:
                    delay = self._now - completed_at
                    self.delay_histogram[delay] = self.delay_histogram.get(delay, 0) + 1
                if op.id in self._throttled:
                    self._throttled.discard(op.id)
                    self._out_in_flight -= 1
                callback(op.status)
                executed += 1
                self.callbacks_fired += 1
        while self._pending and len(self._active) < self.capacity:
            self._active.append(self._pending.popleft())
            self.promotions += 1
        self._start_sends()
        return executed

    def _admit(self, op, callback):
        if len(self._active) < self.capacity:
            self._active.append((op, callback))
        else:
            self._pending.append((op, callback))

    def _start_sends(self):
        while self._send_queue and self._out_in_flight < self.max_concurrent_out:
            start, callback = self._send_queue.popleft()
            op = start()
            self._throttled.add(op.id)
            self._out_in_flight += 1
            self._admit(op, callback)

    @property
    def idle(self) -> bool:
        return not (self._active or self._pending or self._send_queue or self._inbox)


_group_ids = itertools.count(1)


class RequestGroupManager:
    """Groups of requests whose combined completion fires one callback."""

    def __init__(self):
        self._inbox: deque = deque()
        self._inbox_lock = threading.Lock()
        self.groups: dict[int, dict] = {}
        self.lookup: dict[int, int] = {}     # op id -> group id
        self._order: deque = deque()         # op entries in insertion order
        self._cursor = 0
        self.callbacks_fired = 0

    def submit(self, ops: list[OpHandle], callback) -> int:
        gid = next(_group_ids)
        with self._inbox_lock:
            self._inbox.append((gid, list(ops), callback))
        return gid

    def poll(self, max_n: int) -> int:
        """Test up to max_n active requests (round-robin over insertion
        order) and fire callbacks for groups whose last member completed."""
        if max_n < 1:
            raise ValueError("max_n must be >= 1")
        with self._inbox_lock:
            submissions = list(self._inbox)
            self._inbox.clear()
        for gid, ops, callback in submissions:
            self.groups[gid] = {
                "ops": ops,
                "callback": callback,
                "remaining": len(ops),
                "statuses": [None] * len(ops),
            }
            for i, op in enumerate(ops):
                self.lookup[op.id] = gid
                self._order.append((op, gid, i))

        live = [e for e in self._order if e[0].id in self.lookup]
        self._order = deque(live)
        if not live:
            return 0
        start = self._cursor % len(live)
        subset = [live[(start + k) % len(live)] for k in range(min(max_n, len(live)))]
        self._cursor = (start + len(subset)) % max(len(live), 1)

        done = testsome([op for op, _, _ in subset])
        fired = 0
        for idx in done:
            op, gid, slot = subset[idx]
            group = self.groups[gid]
            group["statuses"][slot] = op.status
            group["remaining"] -= 1
            del self.lookup[op.id]
            if group["remaining"] == 0:
                del self.groups[gid]
                group["callback"](group["statuses"])
                fired += 1
                self.callbacks_fired += 1
        return fired

    @property
    def idle(self) -> bool:
        return not (self.groups or self.lookup or self._inbox)
