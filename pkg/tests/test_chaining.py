"""Continuations attached to a continuation request itself."""

import pytest

from contmsg import EMPTY_STATUS, Runtime, errors


@pytest.fixture
def rt():
    runtime = Runtime(2)
    yield runtime
    runtime.close()


def pending(rt, tag):
    return rt.endpoint(1).irecv(0, tag, 8)


def test_chain_fires_at_completion_call(rt):
    inner = rt.continue_init()
    outer = rt.continue_init()
    order = []
    rop = pending(rt, 1)
    inner.attach(rop, lambda s, c: order.append("work"))
    statuses = [None]
    flag = outer.attach(inner, lambda s, c: order.append("chain"),
                        statuses=statuses)
    assert flag is False
    rt.endpoint(0).isend(1, 1, b"x")
    for _ in range(3):
        rt.progress_tick()
    # Inner's continuation ran, but inner has not been observed complete yet.
    assert order == ["work"]
    assert inner.test() is True   # ACTIVE_IDLE -> COMPLETE fires the chain
    rt.progress_tick()
    assert order == ["work", "chain"]
    assert statuses[0] == EMPTY_STATUS
    assert outer.test() is True


def test_chain_on_fresh_cr_fires_on_first_test(rt):
    inner = rt.continue_init()
    outer = rt.continue_init()
    hits = []
    outer.attach(inner, lambda s, c: hits.append(1))
    assert hits == []
    inner.test()
    rt.progress_tick()
    assert hits == [1]


def test_chain_on_completed_cr_is_immediate(rt):
    inner = rt.continue_init()
    inner.test()   # COMPLETE
    outer = rt.continue_init()
    hits = []
    flag = outer.attach(inner, lambda s, c: hits.append(1))
    assert flag is True
    assert hits == []


def test_chain_mixed_with_op(rt):
    inner = rt.continue_init()
    outer = rt.continue_init()
    hits = []
    r1 = pending(rt, 2)
    inner.attach(r1, lambda s, c: None)
    r2 = pending(rt, 3)
    outer.attach([inner, r2], lambda s, c: hits.append(1))
    rt.endpoint(0).isend(1, 2, b"a")
    rt.endpoint(0).isend(1, 3, b"b")
    for _ in range(3):
        rt.progress_tick()
    assert hits == []          # inner not yet observed complete
    inner.test()
    rt.progress_tick()
    assert hits == [1]


def test_chain_fires_once_despite_reuse(rt):
    inner = rt.continue_init()
    outer = rt.continue_init()
    hits = []
    r1 = pending(rt, 4)
    inner.attach(r1, lambda s, c: None)
    outer.attach(inner, lambda s, c: hits.append(1))
    rt.endpoint(0).isend(1, 4, b"x")
    for _ in range(3):
        rt.progress_tick()
    inner.test()
    rt.progress_tick()
    assert hits == [1]
    # Reuse the inner CR; completing it again must not refire the old chain.
    r2 = pending(rt, 5)
    inner.attach(r2, lambda s, c: None)
    rt.endpoint(0).isend(1, 5, b"y")
    for _ in range(3):
        rt.progress_tick()
    inner.test()
    rt.progress_tick()
    assert hits == [1]


def test_self_chain_rejected(rt):
    cr = rt.continue_init()
    with pytest.raises(errors.SelfChain):
        cr.attach([cr], lambda s, c: None)


def test_freed_operand_rejected(rt):
    inner = rt.continue_init()
    inner.free()
    outer = rt.continue_init()
    with pytest.raises(errors.FreedRequest):
        outer.attach(inner, lambda s, c: None)
