"""Shared test machinery: matching oracle, schedule generators, stress runs.

The oracle is an independent reference implementation of the matching
semantics (plain lists, linear scans, immediate bookkeeping) used to check
the production matcher; it shares no code with the transport.
"""

from __future__ import annotations

import random
import threading
import time
from collections import Counter

from contmsg import ANY_SOURCE, ANY_TAG, Runtime

# ---------------------------------------------------------------------------
# Brute-force matching oracle
# ---------------------------------------------------------------------------


class OracleWorld:
    """Reference for non-overtaking matching with buffered sends."""

    def __init__(self, world_size):
        self.world = world_size
        self.pending = [[] for _ in range(world_size)]     # (rid, src, tag, cap)
        self.unexpected = [[] for _ in range(world_size)]  # (src, tag, data)
        self.outbox = [[] for _ in range(world_size)]      # (dst, tag, data)
        self.results = {}                                  # rid -> status tuple

    def send(self, src, dst, tag, data):
        self.outbox[src].append((dst, tag, data))

    def recv(self, ep, rid, source, tag, cap):
        for i, (msrc, mtag, data) in enumerate(self.unexpected[ep]):
            if source in (ANY_SOURCE, msrc) and tag in (ANY_TAG, mtag):
                del self.unexpected[ep][i]
                self._deliver(rid, msrc, mtag, data, cap)
                return
        self.pending[ep].append((rid, source, tag, cap))

    def poll(self, src):
        for dst, tag, data in self.outbox[src]:
            self._arrive(dst, src, tag, data)
        self.outbox[src] = []

    def _arrive(self, ep, msrc, mtag, data):
        for i, (rid, source, tag, cap) in enumerate(self.pending[ep]):
            if source in (ANY_SOURCE, msrc) and tag in (ANY_TAG, mtag):
                del self.pending[ep][i]
                self._deliver(rid, msrc, mtag, data, cap)
                return
        self.unexpected[ep].append((msrc, mtag, data))

    def _deliver(self, rid, msrc, mtag, data, cap):
        clipped = data[:cap]
        truncated = len(data) > cap
        self.results[rid] = (msrc, mtag, len(clipped), truncated, clipped)


def random_schedule(rng, world_size, n_messages, wildcards=True):
    """Build an event list: sends, receives, and poll points."""
    events = []
    tags = [0, 1, 2, 3]
    n_recvs = n_messages + rng.randint(0, 3)
    sends = []
    for _ in range(n_messages):
        src = rng.randrange(world_size)
        dst = rng.randrange(world_size)
        tag = rng.choice(tags)
        size = rng.randint(0, 12)
        sends.append(("send", src, dst, tag, bytes(rng.randrange(256)
                                                   for _ in range(size))))
    recvs = []
    for rid in range(n_recvs):
        ep = rng.randrange(world_size)
        if wildcards and rng.random() < 0.25:
            source = ANY_SOURCE
        else:
            source = rng.randrange(world_size)
        tag = ANY_TAG if (wildcards and rng.random() < 0.25) else rng.choice(tags)
        cap = rng.choice((0, 4, 8, 16))
        recvs.append(("recv", ep, rid, source, tag, cap))
    events = sends + recvs
    rng.shuffle(events)
    # Sprinkle poll points so deliveries interleave with postings.
    out = []
    for ev in events:
        out.append(ev)
        if rng.random() < 0.3:
            out.append(("poll", rng.randrange(world_size)))
    return out


def replay_real(schedule, world_size, transport="loopback"):
    """Run a schedule against the production transport; return rid statuses."""
    rt = Runtime(world_size, transport)
    try:
        handles = {}
        for ev in schedule:
            if ev[0] == "send":
                _, src, dst, tag, data = ev
                rt.endpoint(src).isend(dst, tag, data)
            elif ev[0] == "recv":
                _, ep, rid, source, tag, cap = ev
                handles[rid] = rt.endpoint(ep).irecv(source, tag, cap)
            else:
                rt.endpoint(ev[1]).poll()
        rounds = 2000 if transport == "tcp" else 3
        for _ in range(rounds):
            for ep in rt.endpoints:
                ep.poll()
            if all(op._done for op in handles.values()):
                break
            if transport == "tcp":
                time.sleep(0.0005)
        results = {}
        for rid, op in handles.items():
            if op._done:
                st = op.status
                results[rid] = (st.source, st.tag, st.count,
                                st.error.value == "truncated", op.data)
            else:
                results[rid] = None
        return results
    finally:
        rt.close()


def replay_oracle(schedule, world_size):
    world = OracleWorld(world_size)
    rids = []
    for ev in schedule:
        if ev[0] == "send":
            _, src, dst, tag, data = ev
            world.send(src, dst, tag, data)
        elif ev[0] == "recv":
            _, ep, rid, source, tag, cap = ev
            rids.append(rid)
            world.recv(ep, rid, source, tag, cap)
        else:
            world.poll(ev[1])
    for src in range(world_size):
        world.poll(src)
    return {rid: world.results.get(rid) for rid in rids}


def fixed_matched_schedule(rng, world_size):
    """Schedule with specific sources where every receive matches a message,
    so outcomes are timing-independent and both substrates must agree."""
    events = []
    rid = 0
    recvs = []
    for src in range(world_size):
        for dst in range(world_size):
            if src == dst:
                continue
            for _ in range(rng.randint(0, 3)):
                tag = rng.choice((0, 1, 2))
                size = rng.randint(0, 10)
                payload = bytes(rng.randrange(256) for _ in range(size))
                events.append(("send", src, dst, tag, payload))
                recvs.append(("recv", dst, rid, src, tag, rng.choice((4, 8, 16))))
                rid += 1
    rng.shuffle(events)
    rng.shuffle(recvs)
    # Receives first: posting order decides matching, arrivals fill in.
    return recvs + events


# ---------------------------------------------------------------------------
# Exactly-once stress
# ---------------------------------------------------------------------------


class StressOutcome:
    def __init__(self, fired, flagged, n_units, runtime):
        self.fired = fired          # Counter of unit -> callback invocations
        self.flagged = flagged      # Counter of unit -> immediate completions
        self.n_units = n_units
        self.runtime = runtime

    def lost(self):
        return [u for u in range(self.n_units)
                if self.fired[u] + self.flagged[u] == 0]

    def duplicated(self):
        return [u for u in range(self.n_units)
                if self.fired[u] + self.flagged[u] > 1]


def exactly_once_stress(seed, n_units=10_000, agents=8, world=4):
    """Post n_units continuations from `agents` threads; count invocations."""
    rng = random.Random(seed)
    plan = []
    for i in range(n_units):
        src = rng.randrange(world)
        dst = rng.randrange(world)
        plan.append((src, dst, rng.random() < 0.3))
    rt = Runtime(world)
    crs = [rt.continue_init(),
           rt.continue_init(),
           rt.continue_init({"enqueue_complete": True}),
           rt.continue_init({"exec_context": "any"})]
    buckets = []
    buckets_lock = threading.Lock()
    payload = b"stress!!"

    agent_errors = []

    def agent(worker_idx):
        fired = []
        flags = []
        with buckets_lock:
            buckets.append((fired, flags))

        def cb(_statuses, unit):
            fired.append(unit)

        eps = rt.endpoints
        try:
            for i in range(worker_idx, n_units, agents):
                src, dst, attach_all = plan[i]
                rop = eps[dst].irecv(src, i, 8)
                sop = eps[src].isend(dst, i, payload)
                cr = crs[i & 3]
                if attach_all:
                    flag = cr.attach([sop, rop], cb, context=i)
                else:
                    flag = cr.attach(rop, cb, context=i)
                if flag:
                    flags.append(i)
                if i % 256 == 0:
                    rt.progress_tick()
        except Exception as exc:  # surface agent crashes in the assertion
            agent_errors.append(exc)

    threads = [threading.Thread(target=agent, args=(a,)) for a in range(agents)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # Only the main thread tests, satisfying the single-tester contract.
    if agent_errors:
        raise AssertionError(f"agent raised: {agent_errors[0]!r}")
    for _ in range(5000):
        rt.progress_tick()
        if all([cr.test() for cr in crs]):
            break
    else:
        raise AssertionError("stress did not drain")
    fired = Counter()
    flagged = Counter()
    for f, g in buckets:
        fired.update(f)
        flagged.update(g)
    rt.close()
    return StressOutcome(fired, flagged, n_units, rt)


# ---------------------------------------------------------------------------
# Baseline-vs-engine equivalence schedules
# ---------------------------------------------------------------------------


def unit_schedule(rng, world_size, max_ops=64):
    """Units of 1-2 message pairs; a unit fires one callback when all of its
    receives have completed."""
    units = []
    ops = 0  # each pair is one send plus one receive
    tag = 0
    while ops + 2 <= max_ops:
        n = rng.choice((1, 1, 2))
        if ops + 2 * n > max_ops:
            n = 1
        pairs = []
        for _ in range(n):
            src = rng.randrange(world_size)
            dst = rng.randrange(world_size)
            pairs.append((src, dst, tag))
            tag += 1
        units.append(pairs)
        ops += 2 * n
    return units


def run_units_engine(units, world_size):
    rt = Runtime(world_size)
    try:
        cr = rt.continue_init()
        fired = []
        for uid, pairs in enumerate(units):
            rops = [rt.endpoint(dst).irecv(src, tag, 8) for src, dst, tag in pairs]
            flag = cr.attach(rops, lambda _s, u: fired.append(u), context=uid)
            if flag:
                fired.append(uid)
            for src, dst, tag in pairs:
                rt.endpoint(src).isend(dst, tag, b"unit")
        for _ in range(2000):
            rt.progress_tick()
            if cr.test():
                break
        return sorted(fired)
    finally:
        rt.close()


def run_units_activeset(units, world_size, capacity=8):
    from contmsg import ActiveSetManager

    rt = Runtime(world_size)
    try:
        mgr = ActiveSetManager(capacity=capacity)
        fired = []
        remaining = {}
        for uid, pairs in enumerate(units):
            remaining[uid] = len(pairs)
            for src, dst, tag in pairs:
                rop = rt.endpoint(dst).irecv(src, tag, 8)

                def cb(_status, u=uid):
                    remaining[u] -= 1
                    if remaining[u] == 0:
                        fired.append(u)

                mgr.post(rop, cb)
            for src, dst, tag in pairs:
                rt.endpoint(src).isend(dst, tag, b"unit")
        for _ in range(2000):
            for ep in rt.endpoints:
                ep.poll()
            mgr.tick()
            if len(fired) == len(units):
                break
        return sorted(fired)
    finally:
        rt.close()


def run_units_groups(units, world_size, max_n=8):
    from contmsg import RequestGroupManager

    rt = Runtime(world_size)
    try:
        mgr = RequestGroupManager()
        fired = []
        for uid, pairs in enumerate(units):
            rops = [rt.endpoint(dst).irecv(src, tag, 8) for src, dst, tag in pairs]
            mgr.submit(rops, lambda _s, u=uid: fired.append(u))
            for src, dst, tag in pairs:
                rt.endpoint(src).isend(dst, tag, b"unit")
        for _ in range(2000):
            for ep in rt.endpoints:
                ep.poll()
            mgr.poll(max_n)
            if len(fired) == len(units):
                break
        return sorted(fired)
    finally:
        rt.close()
