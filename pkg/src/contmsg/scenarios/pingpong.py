"""Ping-pong latency probe between ranks 0 and 1.

The continuation variant re-posts its receive inside the callback; the
activeset and groups variants drive the same exchange through the polling
managers.  Round trips are measured in driver ticks, so loopback runs are
bit-reproducible per seed.
"""

from __future__ import annotations

import random

from ..baseline import ActiveSetManager, RequestGroupManager
from ..engine import Runtime
from .config import ScenarioConfig, ScenarioResult

TAG_PING = 1
TAG_PONG = 2

HEADER = ["scenario", "variant", "iteration", "round_trip_ticks", "error"]


class _State:
    def __init__(self):
        self.tick = 0
        self.send_tick = 0
        self.done = False
        self.rows = []
        self.pings_left = 0
        self.ping_error = "ok"

    def trip_error(self, pong_error):
        # A round trip is truncated if either leg clipped its payload.
        if "truncated" in (self.ping_error, pong_error):
            return "truncated"
        return pong_error


def run_pingpong(cfg: ScenarioConfig) -> ScenarioResult:
    cfg.validate()
    rng = random.Random(cfg.seed)
    payloads = [rng.randbytes(cfg.message_size) for _ in range(cfg.iterations)]
    capacity = cfg.recv_capacity if cfg.recv_capacity is not None else cfg.message_size

    rt = Runtime(cfg.world_size, cfg.transport, cfg.roster)
    try:
        st = _State()
        st.pings_left = cfg.iterations
        if cfg.variant == "continuations":
            _drive_continuations(cfg, rt, st, payloads, capacity)
        else:
            _drive_managers(cfg, rt, st, payloads, capacity)
    finally:
        rt.close()
    return ScenarioResult(
        header=HEADER, rows=st.rows, ok=True,
        summary=f"pingpong {cfg.variant}: {len(st.rows)} round trips "
                f"in {st.tick} ticks",
        details={"ticks": st.tick})


def _drive_continuations(cfg, rt, st, payloads, capacity):
    ep0, ep1 = rt.endpoint(0), rt.endpoint(1)
    knobs = {"poll_only": cfg.poll_only, "max_poll": cfg.max_poll,
             "enqueue_complete": cfg.enqueue_complete}
    cr0 = rt.continue_init(knobs)
    cr1 = rt.continue_init(knobs)

    def arm_echo():
        rop = ep1.irecv(0, TAG_PING, capacity)
        statuses = [None]

        def on_ping(sts, _ctx):
            st.ping_error = sts[0].error.value
            ep1.isend(0, TAG_PONG, rop.data)
            st.pings_left -= 1
            if st.pings_left > 0:
                arm_echo()

        cr1.attach(rop, on_ping, statuses=statuses)

    def launch(i):
        st.send_tick = st.tick
        pong = ep0.irecv(1, TAG_PONG, capacity)
        statuses = [None]

        def on_pong(sts, _ctx):
            st.rows.append(("pingpong", cfg.variant, i,
                            st.tick - st.send_tick,
                            st.trip_error(sts[0].error.value)))
            if i + 1 < cfg.iterations:
                launch(i + 1)
            else:
                st.done = True

        cr0.attach(pong, on_pong, statuses=statuses)
        ep0.isend(1, TAG_PING, payloads[i])

    arm_echo()
    launch(0)
    # Testing both CRs each tick also serves poll_only configurations.
    _tick_until_done(cfg, rt, st, lambda: (cr0.test(), cr1.test()))


def _drive_managers(cfg, rt, st, payloads, capacity):
    ep0, ep1 = rt.endpoint(0), rt.endpoint(1)
    if cfg.variant == "activeset":
        mgr0 = ActiveSetManager(cfg.k)
        mgr1 = ActiveSetManager(cfg.k)
        submit0 = mgr0.post
        submit1 = mgr1.post
        step = lambda: (mgr0.tick(), mgr1.tick())
    else:
        mgr0 = RequestGroupManager()
        mgr1 = RequestGroupManager()
        submit0 = lambda op, cb: mgr0.submit([op], lambda sts: cb(sts[0]))
        submit1 = lambda op, cb: mgr1.submit([op], lambda sts: cb(sts[0]))
        step = lambda: (mgr0.poll(cfg.k), mgr1.poll(cfg.k))

    def arm_echo():
        rop = ep1.irecv(0, TAG_PING, capacity)

        def on_ping(status):
            st.ping_error = status.error.value
            ep1.isend(0, TAG_PONG, rop.data)
            st.pings_left -= 1
            if st.pings_left > 0:
                arm_echo()

        submit1(rop, on_ping)

    def launch(i):
        st.send_tick = st.tick
        pong = ep0.irecv(1, TAG_PONG, capacity)

        def on_pong(status):
            st.rows.append(("pingpong", cfg.variant, i,
                            st.tick - st.send_tick,
                            st.trip_error(status.error.value)))
            if i + 1 < cfg.iterations:
                launch(i + 1)
            else:
                st.done = True

        submit0(pong, on_pong)
        ep0.isend(1, TAG_PING, payloads[i])

    arm_echo()
    launch(0)
    _tick_until_done(cfg, rt, st, step)


def _tick_until_done(cfg, rt, st, manager_step=None):
    budget = cfg.iterations * 50 + 2000
    while not st.done:
        st.tick += 1
        rt.progress_tick()
        if manager_step is not None:
            manager_step()
        budget -= 1
        if budget <= 0:
            raise RuntimeError("pingpong stalled: no progress within tick budget")
