import hashlib

import pytest
from hypothesis import given, strategies as st

from xchainsim.lsd import lsd_transform
from xchainsim.samples import load_program
from xchainsim.vm import (DEFAULT_GAS, AbiMismatch, GasMeter, GasSchedule, Instr, OutOfGas,
                          Revert, ValidationFailed, analyze_access, assemble, disassemble,
                          execute, from_bytecode, replace_instruction, slot_key, to_bytecode)

HOTEL_LOGIC_DIGEST = "880ac3e665349316880f17a256ca5576efcc654909a484d96009c531e43a1bad"


def hotel():
    return load_program("hotel")


def test_gas_schedule_constants():
    g = DEFAULT_GAS
    assert (g.instruction, g.deploy_slot, g.bytecode_byte, g.storage_write, g.event_byte) == (
        3, 20_000, 200, 5_000, 8)


def test_gas_schedule_rejects_nonpositive():
    with pytest.raises(ValueError):
        GasSchedule(instruction=0)


def test_book_arithmetic():
    storage = {"price": 5, "remain": 2}
    assert execute(hotel(), "book", [1], gas=10**6, storage=storage) == (5,)
    assert storage["remain"] == 1


def test_book_more_than_remaining_reverts():
    storage = {"price": 5, "remain": 2}
    with pytest.raises(Revert):
        execute(hotel(), "book", [3], gas=10**6, storage=storage)


def test_book_zero_reverts():
    with pytest.raises(Revert):
        execute(hotel(), "book", [0], gas=10**6, storage={"price": 5, "remain": 2})


def test_logic_is_pure_and_deterministic():
    logic, _ = lsd_transform(hotel())
    f = logic.function("book")
    args = [0] * len(f.params)
    args[:3] = [5, 2, 1]
    m1, m2 = GasMeter(10**6), GasMeter(10**6)
    assert execute(logic, "book", args, gas=m1) == execute(logic, "book", args, gas=m2)
    assert m1.used == m2.used > 0


def test_train_pricing():
    # fare = price*num (x1.5 first class), x0.9 from 4 tickets, +8% tax, +2/ticket, -20 over 1000
    def oracle(price, num, klass):
        base = price * num
        fare = base * 150 // 100 if klass else base
        if num > 3:
            fare = fare * 90 // 100
        fare = fare + fare * 8 // 100 + 2 * num
        return fare - 20 if fare >= 1000 else fare
    train = load_program("train")
    for price, num, klass in [(10, 1, 0), (10, 5, 1), (100, 9, 1), (7, 3, 0)]:
        st_ = {"price": price, "seats": 100}
        assert execute(train, "book", [num, klass], gas=10**6, storage=st_) == (
            oracle(price, num, klass),)
        assert st_["seats"] == 100 - num


def test_out_of_gas():
    with pytest.raises(OutOfGas):
        execute(hotel(), "book", [1], gas=10, storage={"price": 5, "remain": 2})


def test_abi_checks():
    with pytest.raises(AbiMismatch):
        execute(hotel(), "book", [], gas=10**6, storage={})
    with pytest.raises(AbiMismatch):
        execute(hotel(), "nope", [], gas=10**6, storage={})
    with pytest.raises(AbiMismatch):
        execute(hotel(), "book", [-1], gas=10**6, storage={})


def test_back_edge_rejected():
    src = """
    .program Loop logic
    .func spin -> x:uint
    top:
        push 1
        jump top
        ret 1
    .end
    """
    with pytest.raises(ValidationFailed):
        assemble(src)


def test_storage_op_in_logic_rejected():
    with pytest.raises(ValidationFailed):
        assemble(".program L logic\n.slot a uint\n.func f -> x:uint\nsload a\nret 1\n.end\n")


def test_forward_jump_runs():
    src = """
    .program J logic
    .func pick c:uint -> x:uint
        arg c
        jumpi yes
        push 7
        ret 1
    yes:
        push 9
        ret 1
    .end
    """
    p = assemble(src)
    assert execute(p, "pick", [0], gas=10**4) == (7,)
    assert execute(p, "pick", [1], gas=10**4) == (9,)


def test_bytecode_roundtrip():
    for name in ("train", "hotel", "agency"):
        p = load_program(name)
        q = from_bytecode(p.bytecode, p.abi, p.name)
        assert q.bytecode == p.bytecode
        assert q.functions == p.functions
        assert assemble(disassemble(p)).bytecode == p.bytecode


def test_hotel_logic_digest_golden():
    logic, _ = lsd_transform(hotel())
    assert logic.code_hash == hashlib.sha256(to_bytecode(logic)).digest()
    assert logic.code_hash.hex() == HOTEL_LOGIC_DIGEST


def test_clone_digest_equality():
    logic, _ = lsd_transform(hotel())
    clone = from_bytecode(logic.bytecode, logic.abi, logic.name)
    assert clone.code_hash == logic.code_hash
    altered = replace_instruction(logic, "book", 0, Instr("push", 12345))
    assert altered.code_hash != logic.code_hash


def test_deploy_cost_formula():
    p = hotel()
    assert DEFAULT_GAS.deploy_cost(p) == 32_000 + 200 * len(p.bytecode) + 20_000 * len(p.slots)


def test_decoupled_logic_is_cheaper_to_deploy():
    for name in ("train", "hotel"):
        mono = load_program(name)
        logic, _ = lsd_transform(mono)
        assert DEFAULT_GAS.deploy_cost(logic) < DEFAULT_GAS.deploy_cost(mono)


def test_access_analysis():
    agency = load_program("agency")
    acc = analyze_access(agency, "settle")
    assert ("wallet", 0) in acc.reads and ("wallet", 0) in acc.writes
    assert analyze_access(hotel(), "book").writes == (("remain", None),)


def test_slot_key():
    assert slot_key("remain") == "remain"
    assert slot_key("wallet", 7) == "wallet[7]"


@given(st.integers(0, 2**256 - 1), st.integers(0, 2**256 - 1))
def test_arithmetic_wraps_or_reverts_within_uint(a, b):
    src = ".program A logic\n.func f a:uint b:uint -> x:uint\narg a\narg b\nadd\nret 1\n.end\n"
    p = assemble(src)
    try:
        (x,) = execute(p, "f", [a, b], gas=10**4)
    except Revert:
        assert a + b > 2**256 - 1
    else:
        assert 0 <= x <= 2**256 - 1 and x == a + b
