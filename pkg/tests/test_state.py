import pytest
from hypothesis import given, settings, strategies as st

from xchainsim.lsd import lsd_transform
from xchainsim.samples import load_program
from xchainsim.state import (ABORT, AMOUNT, COMMIT, EXPIRED, READ, WHOLE, AlreadyLocked,
                             InsufficientAvailable, LockRequest, StateContract, Unauthorized)
from xchainsim.vm import execute

BRIDGE = "0xbridge"


def shotel(remain=10, price=5):
    _, state = lsd_transform(load_program("hotel"))
    return StateContract("0xs", state, logic_addr="0xl", bridge_addr=BRIDGE,
                         storage={"remain": remain, "price": price})


def lock(s, inv, *reqs, expiry=100):
    return s.lock_state(None, BRIDGE, [LockRequest(*r) for r in reqs], inv, expiry)


def test_amount_lock_reduces_available():
    s = shotel()
    assert lock(s, b"a", ("remain", AMOUNT, 3)) == {"remain": 3}
    assert s.available("remain") == 7 and s.pooled("remain") == 3


def test_concurrent_amount_locks():
    s = shotel()
    lock(s, b"a", ("remain", AMOUNT, 3))
    lock(s, b"b", ("remain", AMOUNT, 3))
    assert s.available("remain") == 4


def test_whole_lock_excludes_everything():
    s = shotel()
    lock(s, b"a", ("remain", WHOLE))
    for mode in (WHOLE, READ, AMOUNT):
        with pytest.raises(AlreadyLocked):
            lock(s, b"b", ("remain", mode, 1))


def test_read_locks_share():
    s = shotel()
    lock(s, b"a", ("price", READ))
    lock(s, b"b", ("price", READ))
    with pytest.raises(AlreadyLocked):
        lock(s, b"c", ("price", WHOLE))


def test_insufficient_available():
    s = shotel(remain=4)
    lock(s, b"a", ("remain", AMOUNT, 3))
    with pytest.raises(InsufficientAvailable):
        lock(s, b"b", ("remain", AMOUNT, 2))
    assert s.available("remain") == 1


def test_abort_restores():
    s = shotel()
    lock(s, b"a", ("remain", AMOUNT, 3))
    assert s.update_state(None, BRIDGE, b"a", ABORT) == "ack"
    assert s.get("remain") == 10 and not s.lockpool


def test_commit_from_pool_matches_vm():
    s = shotel()
    snap = lock(s, b"a", ("remain", AMOUNT, 3), ("price", READ))
    view = dict(snap)
    logic, state = lsd_transform(load_program("hotel"))
    execute(state, "book", [1], gas=10**6, storage=view, logic=logic)
    assert view["remain"] == 2       # 3 pooled minus 1 booked
    s.update_state(None, BRIDGE, b"a", COMMIT, {"remain": view["remain"]})
    assert s.get("remain") == 9 and not s.lockpool
    # duplicate commit is a no-op
    assert s.update_state(None, BRIDGE, b"a", COMMIT, {"remain": 0}) == "noop"
    assert s.get("remain") == 9


def test_only_bridge_may_lock_or_update():
    s = shotel()
    with pytest.raises(Unauthorized):
        s.lock_state(None, "0xevil", [LockRequest("remain", WHOLE)], b"a", 10)
    lock(s, b"a", ("remain", WHOLE))
    with pytest.raises(Unauthorized):
        s.update_state(None, "0xevil", b"a", ABORT)


@given(st.text(min_size=1, max_size=12).filter(lambda c: c != BRIDGE))
def test_authorization_fuzz(caller):
    s = shotel()
    with pytest.raises(Unauthorized):
        s.lock_state(None, caller, [LockRequest("remain", AMOUNT, 1)], b"x", 10)
    with pytest.raises(Unauthorized):
        s.cancel(None, caller, b"x")


def test_expiry_releases_bags():
    s = shotel()
    lock(s, b"a", ("remain", AMOUNT, 3), expiry=5)
    assert s.expire(4) == []
    assert s.expire(5) == [b"a"]
    assert s.available("remain") == 10 and s.settled[b"a"] == EXPIRED
    # the late abort after expiry still succeeds and keeps conservation
    assert s.update_state(None, BRIDGE, b"a", ABORT) == "noop"
    assert s.conserved()


def test_cancel_blocks_late_lock():
    s = shotel()
    s.cancel(None, BRIDGE, b"a")
    with pytest.raises(Exception):
        lock(s, b"a", ("remain", AMOUNT, 1))
    assert not s.lockpool


ops = st.lists(st.tuples(st.integers(0, 5), st.sampled_from(["lock", "commit", "abort", "expire"]),
                         st.integers(1, 6), st.integers(0, 6)), max_size=40)


@settings(max_examples=150, deadline=None)
@given(ops)
def test_slot_conservation(seq):
    """committed value = available + sum of pooled amounts, at every step."""
    s = shotel(remain=12)
    height = 0
    for inv_n, op, amount, used in seq:
        inv = bytes([inv_n])
        height += 1
        try:
            if op == "lock":
                lock(s, inv, ("remain", AMOUNT, amount), expiry=height + 8)
            elif op == "commit" and inv in s.lockpool:
                pooled = s.pooled("remain", inv)
                s.update_state(None, BRIDGE, inv, COMMIT, {"remain": max(0, pooled - used)})
            elif op == "abort" and inv in s.lockpool:
                s.update_state(None, BRIDGE, inv, ABORT)
            elif op == "expire":
                s.expire(height)
        except (AlreadyLocked, InsufficientAvailable):
            pass
        except Exception as exc:  # settled invocations refuse further locks
            assert type(exc).__name__ == "InvocationSettled"
        assert s.get("remain") == s.available("remain") + s.pooled("remain")
        assert s.available("remain") >= 0
        assert s.conserved()
