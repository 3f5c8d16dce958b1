"""Diffusive task offloading driven by per-iteration wait times.

Each iteration every rank works through a fixed bundle of equal-cost tasks
(rank 0 carries `imbalance` times as many).  A rank that drains its queue
and has all offload results back reports ready to rank 0; once everyone is
ready, rank 0 broadcasts a kick-off carrying the per-rank ready times.  The
wait time of a rank is kick-off minus its own ready time; the rank everyone
waited on reports the negated maximum wait of the others (so "being waited
on" shows up negative in the CSV).

Offloading one task sends a metadata message and a payload message grouped
under one attach-all; the continuation on those sends posts the three
result receives.  Victims identify incoming tasks through pre-posted
persistent metadata receives, post the payload receive from the metadata
callback, execute the task, and return three result messages.

Balancing: each rank keeps a per-target sending rate (tasks per iteration).
While a rank is the critical one, the rate toward each slower target grows
by gain * (target_wait - own_wait) / base_cost per kick-off, provided the
gap exceeds one task's worth of ticks; when it stops being critical its
rates halve.  A victim that fails to return results within
emergency_threshold ticks of the sender going idle triggers an emergency:
its rate is halved and it is blacklisted for blacklist_window iterations.

All timing is in driver ticks, so loopback runs are bit-identical per seed.
"""

from __future__ import annotations

import random
import struct
from collections import deque

from ..core import ANY_SOURCE
from ..engine import Runtime
from .config import ConfigError, ScenarioConfig, ScenarioResult

TAG_META = 1
TAG_READY = 2
TAG_KICK = 3
TAG_DATA_BASE = 1 << 32
TAG_RES_BASE = 1 << 33

META_FMT = "<QII"          # uid, cost, source
READY_FMT = "<II"          # rank, ready tick
RES_FMT = "<Q"             # uid

META_RECVS = 2             # pre-posted persistent metadata receives per rank

HEADER = ["scenario", "iteration", "rank", "wait_time", "tasks_offloaded",
          "emergencies"]


def run_offload(cfg: ScenarioConfig) -> ScenarioResult:
    cfg.validate()
    if cfg.world_size < 2:
        raise ConfigError("offload needs a world of at least 2")
    sim = _Sim(cfg)
    try:
        return sim.run()
    finally:
        sim.rt.close()


class _Sim:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rt = Runtime(cfg.world_size, cfg.transport, cfg.roster)
        self.tick = 0
        self.iteration = 0
        self.rng = random.Random(cfg.seed)
        self.payload = self.rng.randbytes(cfg.message_size)
        self.ranks = [_RankCtl(self, r) for r in range(cfg.world_size)]
        for rc in self.ranks:
            rc.arm()

    def run(self) -> ScenarioResult:
        cfg = self.cfg
        rows = []
        converged_at = None
        initial_gap = None
        offload_matrix = {}
        emergency_log = []
        for i in range(cfg.iterations):
            self.iteration = i
            for rc in self.ranks:
                rc.begin_iteration(i)
            guard = 500_000
            while not all(rc.got_kick for rc in self.ranks):
                self.tick += 1
                for rc in self.ranks:
                    rc.step()
                self.rt.progress_tick()
                guard -= 1
                if guard <= 0:
                    raise RuntimeError(f"offload stalled in iteration {i}")
            gap = max(rc.wait for rc in self.ranks) - min(rc.wait for rc in self.ranks)
            if initial_gap is None:
                initial_gap = gap
            if converged_at is None and gap < 0.1 * max(initial_gap, 1):
                converged_at = i
            for rc in self.ranks:
                rows.append(("offload", i, rc.rank, rc.report,
                             rc.iter_offloaded, rc.emergencies))
                for victim, n in sorted(rc.iter_offloaded_to.items()):
                    offload_matrix[(i, rc.rank, victim)] = n
                for victim in rc.flagged:
                    emergency_log.append((i, rc.rank, victim))
        total_off = sum(r[4] for r in rows)
        return ScenarioResult(
            header=HEADER, rows=rows, ok=True,
            summary=(f"offload: {cfg.iterations} iterations, "
                     f"{total_off} tasks offloaded, converged at "
                     f"{converged_at if converged_at is not None else 'never'}"),
            details={"converged_at": converged_at, "initial_gap": initial_gap,
                     "ticks": self.tick, "offload_matrix": offload_matrix,
                     "emergency_log": emergency_log})


class _RankCtl:
    """Driver-side controller for one rank's queue and balancing state."""

    def __init__(self, sim: _Sim, rank: int):
        self.sim = sim
        self.rank = rank
        self.ep = sim.rt.endpoint(rank)
        self.cr = sim.rt.continue_init()
        world = sim.cfg.world_size
        self.rates = [0.0] * world
        self.blacklist_until = [-1] * world
        self.emergencies = 0
        self.queue: deque = deque()          # (uid, cost_left, source or None)
        self.results_pending: dict[int, int] = {}
        self.flagged: set[int] = set()
        self.is_critical = False
        self.iter_offloaded_to: dict[int, int] = {}
        self.waits: list[int] | None = None
        self.wait = 0
        self.report = 0
        self.local_done_tick = None
        self.ready_tick = None
        self.got_kick = True                 # flipped off at begin_iteration
        self.iter_offloaded = 0
        self._uid_seq = 0
        # rank-0 bookkeeping for the kick-off
        self.others_ready: dict[int, int] = {}
        self.kick_fired = False

    # ---- persistent wiring -------------------------------------------------

    def _attach_or_run(self, ops, callback, statuses=None):
        # Immediate completion leaves the callback to the caller, so run the
        # handler by hand when the operands were already done at attach time
        # (e.g. a message buffered before a persistent receive was re-armed).
        flag = self.cr.attach(ops, callback, statuses=statuses)
        if flag:
            callback(statuses, None)

    def arm(self):
        for _ in range(META_RECVS):
            op = self.ep.recv_init(ANY_SOURCE, TAG_META, struct.calcsize(META_FMT))
            op.start()
            self._attach_meta(op)
        if self.rank == 0:
            for src in range(1, self.sim.cfg.world_size):
                op = self.ep.recv_init(src, TAG_READY, struct.calcsize(READY_FMT))
                op.start()
                self._attach_ready(op)
        else:
            size = 4 * (self.sim.cfg.world_size + 1)
            op = self.ep.recv_init(0, TAG_KICK, size)
            op.start()
            self._attach_kick(op)

    def _attach_meta(self, op):
        def on_meta(statuses, _ctx):
            if statuses[0].cancelled:
                return
            uid, cost, source = struct.unpack(META_FMT, op.data)
            op.start()
            self._attach_meta(op)
            self._expect_task_data(uid, cost, source)
        self._attach_or_run(op, on_meta, statuses=[None])

    def _expect_task_data(self, uid, cost, source):
        dr = self.ep.irecv(source, TAG_DATA_BASE + uid, self.sim.cfg.message_size)

        def on_data(_statuses, _ctx):
            factor = self.sim.cfg.slow_factor \
                if self.sim.cfg.slow_victim == self.rank else 1.0
            self.queue.append((uid, max(1, int(cost * factor)), source))

        self._attach_or_run(dr, on_data)

    def _attach_ready(self, op):
        def on_ready(statuses, _ctx):
            if statuses[0].cancelled:
                return
            rank, tick = struct.unpack(READY_FMT, op.data)
            op.start()
            self._attach_ready(op)
            self.others_ready[rank] = tick
            self._maybe_fire_kick()
        self._attach_or_run(op, on_ready, statuses=[None])

    def _attach_kick(self, op):
        def on_kick(statuses, _ctx):
            if statuses[0].cancelled:
                return
            payload = op.data
            op.start()
            self._attach_kick(op)
            self._on_kick(payload)
        self._attach_or_run(op, on_kick, statuses=[None])

    # ---- per-iteration flow ----------------------------------------------------

    def begin_iteration(self, i: int):
        cfg = self.sim.cfg
        self.got_kick = False
        self.kick_fired = False
        self.others_ready = {}
        self.local_done_tick = None
        self.ready_tick = None
        self.iter_offloaded = 0
        self.iter_offloaded_to = {}
        self.flagged = set()
        n = round(cfg.tasks_per_rank * cfg.imbalance) if self.rank == 0 \
            else cfg.tasks_per_rank
        for _ in range(n):
            self._uid_seq += 1
            uid = self.rank * 10_000_000 + self._uid_seq
            self.queue.append((uid, cfg.base_cost, None))
        if self.waits is not None and self.is_critical:
            self._offload(i)

    def _offload(self, i: int):
        cfg = self.sim.cfg
        waits = self.waits
        available = max(0, len(self.queue) - cfg.tasks_per_rank)
        targets = sorted((r for r in range(cfg.world_size) if r != self.rank),
                         key=lambda r: (-waits[r], r))
        for t in targets:
            if i <= self.blacklist_until[t]:
                continue
            n = min(int(self.rates[t]), available)
            for _ in range(n):
                uid, cost, _src = self.queue.pop()
                self._send_task(t, uid, cost)
            available -= n
            self.iter_offloaded += n
            if n:
                self.iter_offloaded_to[t] = self.iter_offloaded_to.get(t, 0) + n

    def _send_task(self, victim: int, uid: int, cost: int):
        meta = struct.pack(META_FMT, uid, cost, self.rank)
        ms = self.ep.isend(victim, TAG_META, meta)
        ds = self.ep.isend(victim, TAG_DATA_BASE + uid, self.sim.payload)
        self.results_pending[uid] = victim

        def on_sent(_statuses, _ctx):
            # Result receives are deferred to the send-completion callback,
            # keeping the number of simultaneously active requests low.
            recvs = [self.ep.irecv(victim, TAG_RES_BASE + 3 * uid + k,
                                   struct.calcsize(RES_FMT))
                     for k in range(3)]
            self._attach_or_run(
                recvs, lambda _s, _c: self.results_pending.pop(uid, None))

        self._attach_or_run([ms, ds], on_sent)

    def step(self):
        cfg = self.sim.cfg
        tick = self.sim.tick
        budget = cfg.workers
        while budget > 0 and self.queue:
            uid, cost, source = self.queue[0]
            used = min(budget, cost)
            cost -= used
            budget -= used
            if cost == 0:
                self.queue.popleft()
                if source is not None:
                    for k in range(3):
                        self.ep.isend(source, TAG_RES_BASE + 3 * uid + k,
                                      struct.pack(RES_FMT, uid))
            else:
                self.queue[0] = (uid, cost, source)
        if not self.queue and self.local_done_tick is None:
            self.local_done_tick = tick
        if self.local_done_tick is not None and self.ready_tick is None:
            if not self.results_pending:
                self.ready_tick = tick
                if self.rank == 0:
                    self._maybe_fire_kick()
                else:
                    self.ep.isend(0, TAG_READY,
                                  struct.pack(READY_FMT, self.rank, tick))
            else:
                self._check_emergencies(tick)

    def _check_emergencies(self, tick: int):
        cfg = self.sim.cfg
        if tick - self.local_done_tick <= cfg.emergency_threshold:
            return
        for victim in sorted(set(self.results_pending.values())):
            if victim in self.flagged:
                continue
            self.flagged.add(victim)
            self.emergencies += 1
            self.rates[victim] *= 0.5
            self.blacklist_until[victim] = self.sim.iteration + cfg.blacklist_window

    # ---- kick-off & balancing ------------------------------------------------------

    def _maybe_fire_kick(self):
        if self.rank != 0 or self.kick_fired or self.ready_tick is None:
            return
        world = self.sim.cfg.world_size
        if len(self.others_ready) < world - 1:
            return
        self.kick_fired = True
        readies = [self.ready_tick] + [self.others_ready[r] for r in range(1, world)]
        fire = self.sim.tick
        payload = struct.pack("<" + "I" * (world + 1), *readies, fire)
        for r in range(1, world):
            self.ep.isend(r, TAG_KICK, payload)
        self._on_kick(payload)

    def _on_kick(self, payload: bytes):
        cfg = self.sim.cfg
        world = cfg.world_size
        values = struct.unpack("<" + "I" * (world + 1), payload)
        readies, fire = values[:world], values[world]
        waits = [fire - readies[r] for r in range(world)]
        self.waits = waits
        critical = min(range(world), key=lambda r: (waits[r], r))
        self.is_critical = critical == self.rank
        self.wait = waits[self.rank]
        if self.is_critical:
            others = [waits[r] for r in range(world) if r != self.rank]
            self.report = -max(others) if others else 0
            for r in range(world):
                if r == self.rank or self.sim.iteration < self.blacklist_until[r]:
                    continue
                gap = waits[r] - waits[self.rank]
                if gap > cfg.base_cost:
                    self.rates[r] += cfg.gain * gap / cfg.base_cost
        else:
            self.report = self.wait
            self.rates = [rate * 0.5 for rate in self.rates]
        self.got_kick = True
