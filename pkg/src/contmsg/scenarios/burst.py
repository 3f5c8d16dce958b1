"""Active-message burst: M senders flood one receiver.

Measures, per operation, the gap in ticks between transport-level
completion and callback execution.  The active-set variant only tests K
requests at a time, so completions sitting in the pending list wait for
promotion; the continuation variant is notified for all of them as soon as
the receiver tests its continuation request (bounded by max_poll).
"""

from __future__ import annotations

from ..baseline import ActiveSetManager, RequestGroupManager
from ..engine import Runtime
from .config import ScenarioConfig, ScenarioResult

HEADER = ["scenario", "variant", "K", "max_poll", "metric", "key", "value"]


def run_burst(cfg: ScenarioConfig) -> ScenarioResult:
    cfg.validate()
    m = cfg.senders if cfg.senders is not None else 4 * cfg.k
    world = m + 1
    rt = Runtime(world, cfg.transport, cfg.roster)
    try:
        completion_tick: dict[int, int] = {}
        exec_tick: list[int | None] = [None] * m
        handled: dict[int, int] = {}
        tick = [0]

        recv_ops = _post_receives(rt, m)
        op_index = {op.id: j for j, op in enumerate(recv_ops)}

        if cfg.variant == "continuations":
            step = _setup_continuations(rt, cfg, recv_ops, exec_tick, tick)
        elif cfg.variant == "activeset":
            step = _setup_activeset(cfg, recv_ops, exec_tick, tick)
        else:
            step = _setup_groups(cfg, recv_ops, exec_tick, tick)

        for j in range(m):
            rt.endpoint(j + 1).isend(0, j, j.to_bytes(8, "little"))

        budget = 10 * m + 200
        while any(t is None for t in exec_tick):
            tick[0] += 1
            for j in range(m):
                newly = rt.endpoint(j + 1).poll()
                for op_id in newly:
                    if op_id in op_index and op_id not in completion_tick:
                        completion_tick[op_id] = tick[0]
            executed = step()
            if executed:
                handled[tick[0]] = handled.get(tick[0], 0) + executed
            budget -= 1
            if budget <= 0:
                raise RuntimeError("burst stalled: callbacks missing within budget")

        delays = [exec_tick[j] - completion_tick[recv_ops[j].id] for j in range(m)]
    finally:
        rt.close()

    hist: dict[int, int] = {}
    for d in delays:
        hist[d] = hist.get(d, 0) + 1
    rows = [("burst", cfg.variant, cfg.k, cfg.max_poll, "delay_hist", d, hist[d])
            for d in sorted(hist)]
    rows += [("burst", cfg.variant, cfg.k, cfg.max_poll, "handled_per_tick", t, n)
             for t, n in sorted(handled.items())]
    return ScenarioResult(
        header=HEADER, rows=rows, ok=True,
        summary=f"burst {cfg.variant}: {m} messages, K={cfg.k}, "
                f"max delay {max(delays)} ticks",
        details={"delays": delays, "handled_per_tick": handled, "M": m})


def _post_receives(rt, m):
    ep0 = rt.endpoint(0)
    return [ep0.irecv(j + 1, j, 8) for j in range(m)]


def _setup_continuations(rt, cfg, recv_ops, exec_tick, tick):
    # poll_only keeps execution inside the receiver's own test calls so the
    # per-test callback counts are exact.
    cr = rt.continue_init({
        "poll_only": True,
        "enqueue_complete": cfg.enqueue_complete,
        "max_poll": cfg.max_poll,
    })
    for j, op in enumerate(recv_ops):
        def on_done(_statuses, ctx, _j=j):
            exec_tick[_j] = tick[0]
        cr.attach(op, on_done)
    return lambda: _count_test(cr)


def _count_test(cr):
    before = cr.counters.executed
    cr.test()
    return cr.counters.executed - before


def _setup_activeset(cfg, recv_ops, exec_tick, tick):
    mgr = ActiveSetManager(capacity=cfg.k)
    for j, op in enumerate(recv_ops):
        def on_done(_status, _j=j):
            exec_tick[_j] = tick[0]
        mgr.post(op, on_done)
    return lambda: mgr.tick(tick[0])


def _setup_groups(cfg, recv_ops, exec_tick, tick):
    mgr = RequestGroupManager()
    for j, op in enumerate(recv_ops):
        def on_done(_statuses, _j=j):
            exec_tick[_j] = tick[0]
        mgr.submit([op], on_done)
    return lambda: mgr.poll(cfg.k)
