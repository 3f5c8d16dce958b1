import random

import pytest

from contmsg import (ANY_SOURCE, ANY_TAG, OpState, Runtime, StatusError,
                     errors, op_test)
from helpers import random_schedule, replay_oracle, replay_real


@pytest.fixture
def rt():
    runtime = Runtime(4)
    yield runtime
    runtime.close()


def drain(rt, rounds=5):
    for _ in range(rounds):
        for ep in rt.endpoints:
            ep.poll()


class TestBasicMessaging:
    def test_direct_delivery(self, rt):
        rop = rt.endpoint(1).irecv(0, 7, 16)
        rt.endpoint(0).isend(1, 7, bytes(16))
        drain(rt)
        st = rop.status
        assert (st.source, st.tag, st.count, st.cancelled) == (0, 7, 16, False)
        assert st.error is StatusError.OK

    def test_self_send_one_tick(self, rt):
        ep = rt.endpoint(2)
        rop = ep.irecv(2, 5, 8)
        ep.isend(2, 5, b"loop")
        ep.poll()
        assert rop.state is OpState.COMPLETE
        assert rop.data == b"loop"

    def test_send_to_invalid_rank(self, rt):
        with pytest.raises(errors.InvalidRank):
            rt.endpoint(0).isend(99, 7, b"x")

    def test_recv_from_invalid_rank(self, rt):
        with pytest.raises(errors.InvalidRank):
            rt.endpoint(0).irecv(17, 7, 8)

    def test_any_tag_send_rejected(self, rt):
        with pytest.raises(errors.InvalidTag):
            rt.endpoint(0).isend(1, ANY_TAG, b"x")

    def test_non_overtaking_same_tag(self, rt):
        rt.endpoint(1).isend(0, 5, b"first")
        rt.endpoint(1).isend(0, 5, b"second")
        r1 = rt.endpoint(0).irecv(1, 5, 16)
        r2 = rt.endpoint(0).irecv(1, 5, 16)
        drain(rt)
        assert r1.data == b"first"
        assert r2.data == b"second"

    def test_truncation(self, rt):
        rop = rt.endpoint(1).irecv(0, 3, 4)
        rt.endpoint(0).isend(1, 3, b"12345678")
        drain(rt)
        assert rop.status.error is StatusError.TRUNCATED
        assert rop.status.count == 4
        assert rop.data == b"1234"

    def test_wildcard_recv_no_traffic_stays_active(self, rt):
        rop = rt.endpoint(0).irecv(ANY_SOURCE, ANY_TAG, 8)
        drain(rt, rounds=3)
        assert rop.state is OpState.ACTIVE

    def test_unexpected_then_matched(self, rt):
        rt.endpoint(0).isend(1, 9, b"early")
        drain(rt)
        rop = rt.endpoint(1).irecv(0, 9, 8)
        assert rop.state is OpState.COMPLETE
        assert rop.data == b"early"


class TestPersistent:
    def test_recv_init_behaves_as_irecv_after_start(self, rt):
        rop = rt.endpoint(1).recv_init(0, 4, 8)
        assert rop.state is OpState.INACTIVE
        rop.start()
        assert rop.state is OpState.ACTIVE
        rt.endpoint(0).isend(1, 4, b"pp")
        drain(rt)
        assert rop.state is OpState.COMPLETE
        assert rop.data == b"pp"

    def test_second_start_rejected(self, rt):
        rop = rt.endpoint(1).recv_init(0, 4, 8)
        rop.start()
        with pytest.raises(errors.SecondStart):
            rop.start()

    def test_start_non_persistent_rejected(self, rt):
        rop = rt.endpoint(1).irecv(0, 4, 8)
        with pytest.raises(errors.NotPersistent):
            rop.start()

    def test_restart_matches_second_message(self, rt):
        rop = rt.endpoint(1).recv_init(ANY_SOURCE, 3, 64)
        rop.start()
        rt.endpoint(0).isend(1, 3, b"one")
        drain(rt)
        assert rop.data == b"one"
        rop.start()  # restart edge from COMPLETE
        rt.endpoint(2).isend(1, 3, b"two")
        drain(rt)
        assert rop.data == b"two"
        assert rop.status.source == 2

    def test_persistent_send_cycle(self, rt):
        sop = rt.endpoint(0).send_init(1, 6, b"abc")
        rop = rt.endpoint(1).irecv(0, 6, 8)
        sop.start()
        drain(rt)
        assert sop.state is OpState.COMPLETE
        assert rop.data == b"abc"

    def test_op_test_reaps(self, rt):
        rop = rt.endpoint(1).recv_init(0, 4, 8)
        rop.start()
        flag, status = op_test(rop)
        assert flag is False and status is None
        rt.endpoint(0).isend(1, 4, b"hi")
        drain(rt)
        flag, status = op_test(rop)
        assert flag is True and status.count == 2
        assert rop.state is OpState.INACTIVE
        rop.start()  # usable again after the reap

    def test_op_test_inactive_persistent_reports_done(self, rt):
        rop = rt.endpoint(1).recv_init(0, 4, 8)
        flag, status = op_test(rop)
        assert flag is True and status is None


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(60))
    def test_random_schedules_match_oracle(self, seed):
        rng = random.Random(seed)
        world = rng.randint(2, 4)
        schedule = random_schedule(rng, world, rng.randint(4, 32))
        real = replay_real(schedule, world)
        oracle = replay_oracle(schedule, world)
        assert real == oracle

    def test_no_message_delivered_twice(self):
        # Two receives, one message: exactly one completes.
        rt = Runtime(2)
        try:
            r1 = rt.endpoint(1).irecv(0, 2, 8)
            r2 = rt.endpoint(1).irecv(0, 2, 8)
            rt.endpoint(0).isend(1, 2, b"x")
            drain(rt)
            assert r1.state is OpState.COMPLETE
            assert r2.state is OpState.ACTIVE
        finally:
            rt.close()
