import random

import pytest

from xchainsim.lsd import NotDecouplable, lsd_transform
from xchainsim.samples import load_program
from xchainsim.vm import (LOGIC, STATE, VMError, analyze_access, assemble, execute)

LISTING_HOTEL = """
.program Hotel monolithic
.slot price uint
.slot remain uint
.slot accounts map
.func book num:uint -> cost:uint
    sload price
    arg num
    mul
    sload remain
    arg num
    lt
    push 0
    eq
    require
    sload remain
    arg num
    sub
    sstore remain
    ret 1
.end
"""


def test_listing_hotel_split():
    logic, state = lsd_transform(assemble(LISTING_HOTEL))
    assert [s.name for s in state.slots] == ["price", "remain", "accounts", "lock_size",
                                             "lockpool", "addr_lhotel"]
    assert logic.kind == LOGIC and not logic.slots
    assert [f.name for f in logic.functions] == ["book"]
    assert analyze_access(logic, "book").reads == ()
    assert state.kind == STATE


def test_zero_storage_contract():
    src = ".program Pure monolithic\n.func twice x:uint -> y:uint\narg x\npush 2\nmul\nret 1\n.end\n"
    logic, state = lsd_transform(assemble(src))
    assert [s.name for s in state.slots] == ["lock_size", "lockpool", "addr_lpure"]
    assert execute(state, "twice", [21], gas=10**5, storage={}, logic=logic) == (42,)


def test_non_monolithic_input_rejected():
    logic, _ = lsd_transform(load_program("hotel"))
    with pytest.raises(NotDecouplable):
        lsd_transform(logic)


def _run(program, fname, args, storage, logic=None):
    trial = dict(storage)
    try:
        out = execute(program, fname, args, gas=10**7, storage=trial, logic=logic)
    except VMError:
        return "revert", storage
    return out, trial


@pytest.mark.parametrize("name", ["train", "hotel", "agency"])
def test_differential_random_sequences(name):
    mono = load_program(name)
    logic, state = lsd_transform(mono)
    rng = random.Random(name)
    for _ in range(100):
        if name == "agency":
            s0 = {"wallet[1]": rng.randint(0, 50), "wallet[2]": rng.randint(0, 50), "bookings": 0}
        else:
            s0 = {"price": rng.randint(1, 30), "seats": rng.randint(0, 12),
                  "remain": rng.randint(0, 12)}
        a, b = dict(s0), dict(s0)
        for _ in range(rng.randint(1, 8)):
            if name == "train":
                call = ("book", [rng.randint(0, 5), rng.randint(0, 2)])
            elif name == "hotel":
                call = ("book", [rng.randint(0, 5)])
            else:
                call = rng.choice([("settle", [rng.randint(1, 2), rng.randint(0, 9),
                                               rng.randint(0, 9), rng.randint(0, 9)]),
                                   ("open", [rng.randint(1, 2)])])
            ra, a = _run(mono, *call, a)
            rb, b = _run(state, *call, b, logic=logic)
            assert ra == rb
            assert a == b
