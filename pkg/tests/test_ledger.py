import pytest
from hypothesis import given, settings, strategies as st

from xchainsim import merkle
from xchainsim.ledger import (BadNonce, Chain, ChainConfig, InsufficientBalance, NotFound,
                              Transaction, UnknownHeight, calldata)
from xchainsim.samples import load_program
from xchainsim.sim import PRIO_ACTOR, PRIO_BLOCK, PRIO_RELAYER, Scheduler, World
from xchainsim.state import CodeContract


def chain(depth=1, max_txs=4096):
    c = Chain(ChainConfig(1, 5_000, max_txs, depth))
    c.fund("alice", 10**12)
    return c


def hotel_contract(c, remain=5):
    prog = load_program("hotel")
    return c.install(CodeContract("0xhotel", prog, "alice", {"price": 10, "remain": remain}))


def test_fresh_sender_accepted_and_hash_stable():
    a, b = chain(), chain()
    tx = Transaction(1, "alice", 0, "0xhotel", calldata("call", "getPrice", []))
    assert a.submit_tx(tx) == b.submit_tx(tx) == tx.hash


def test_replay_and_gap_rejected():
    c = chain()
    tx = Transaction(1, "alice", 0, "x", b"")
    c.submit_tx(tx)
    with pytest.raises(BadNonce):
        c.submit_tx(tx)
    with pytest.raises(BadNonce):
        c.submit_tx(Transaction(1, "alice", 5, "x", b""))
    c.produce_block(5_000)
    with pytest.raises(BadNonce):
        c.submit_tx(tx)


def test_wrong_chain_and_balance():
    c = chain()
    with pytest.raises(BadNonce):
        c.submit_tx(Transaction(2, "alice", 0, "x", b""))
    with pytest.raises(InsufficientBalance):
        c.submit_tx(Transaction(1, "pauper", 0, "x", b""))


def test_empty_block():
    c = chain()
    b = c.produce_block(5_000)
    assert b.tx_hashes == () and b.receipts_root == merkle.EMPTY_ROOT and b.gas_used == 0


def test_block_capacity():
    c = chain(max_txs=4096)
    for i in range(4097):
        c.fund(f"u{i}", 10**8)
        c.send(f"u{i}", "nobody", "noop")
    b = c.produce_block(5_000)
    assert len(b.tx_hashes) == 4096
    assert len(c.mempool) == 1


def test_reverting_tx_leaves_storage_untouched():
    c = chain()
    addr = hotel_contract(c, remain=5)
    h1 = c.send("alice", addr, "call", "book", [2])
    h2 = c.send("alice", addr, "call", "book", [9])    # more than remains
    h3 = c.send("alice", addr, "call", "book", [1])
    c.produce_block(5_000)
    statuses = [c.receipt(h).status for h in (h1, h2, h3)]
    assert statuses == ["success", "revert", "success"]
    # oracle: apply only the two successful bookings
    assert c.contract(addr).storage["remain"] == 5 - 2 - 1
    assert c.check_conservation()


def test_finality_boundaries():
    c = chain(depth=1)
    for t in range(10):
        c.produce_block((t + 1) * 5_000)
    assert c.height == 10
    assert c.is_finalized(9) and not c.is_finalized(10)
    zero = chain(depth=0)
    zero.produce_block(5_000)
    assert zero.is_finalized(1) and zero.is_finalized(0)
    with pytest.raises(UnknownHeight):
        c.is_finalized(11)


def test_receipt_proofs():
    c = chain()
    addr = hotel_contract(c, remain=100)
    hashes = [c.send("alice", addr, "call", "book", [1]) for _ in range(5)]
    c.produce_block(5_000)
    for h in hashes:
        header, receipt, proof = c.get_receipt_proof(h)
        assert merkle.verify(header.receipts_root, receipt.encode(), proof)
        raw = bytearray(receipt.encode())
        raw[-1] ^= 1
        assert not merkle.verify(header.receipts_root, bytes(raw), proof)
    header, _, proof = c.get_receipt_proof(hashes[4])
    assert len(proof.siblings) == len(merkle.path_shape(4, 5)) == 1
    with pytest.raises(NotFound):
        c.get_receipt_proof(b"\x00" * 32)


def test_unknown_contract_reverts():
    c = chain()
    h = c.send("alice", "0xnothing", "call", "x", [])
    c.produce_block(5_000)
    assert c.receipt(h).status == "revert"


def _world_hashes(seed):
    w = World([ChainConfig(1, 2_000), ChainConfig(2, 3_000)], seed=seed)
    for cid in (1, 2):
        ch = w.chain(cid)
        ch.fund("alice", 10**12)
        hotel_contract(ch, remain=100)
    w.sched.every(1_000, lambda: w.chain(1 + w.rng.randrange(2)).send(
        "alice", "0xhotel", "call", "book", [1 + w.rng.randrange(3)]), 500)
    w.run_until(60_000)
    return {cid: [b.hash for b in w.chain(cid).blocks] for cid in (1, 2)}


def test_determinism_across_runs():
    assert _world_hashes(3) == _world_hashes(3)
    assert _world_hashes(3) != _world_hashes(4)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 6)), max_size=40))
def test_conservation_and_finality_monotone(ops):
    c = chain()
    addr = hotel_contract(c, remain=20)
    finalized = set()
    for i, (produce, n) in enumerate(ops):
        c.send("alice", addr, "call", "book", [n])
        if produce:
            c.produce_block((i + 1) * 1_000)
            now = {h for h in range(c.height + 1) if c.is_finalized(h)}
            assert finalized <= now
            finalized = now
    c.produce_block(10**6)
    assert c.check_conservation()
    remain = c.contract(addr).storage["remain"]
    booked = sum(n for rs in c.receipts for r in rs if r.status == "success"
                 for n in [c.txs[r.tx_hash].call()[1][1][0]])
    assert remain == 20 - booked


def test_scheduler_priorities_and_order():
    s, seen = Scheduler(), []
    s.at(10, lambda: seen.append("actor"), PRIO_ACTOR)
    s.at(10, lambda: seen.append("relayer"), PRIO_RELAYER)
    s.at(10, lambda: seen.append("block"), PRIO_BLOCK)
    s.at(5, lambda: seen.append("early"))
    s.run(100)
    assert seen == ["early", "block", "relayer", "actor"]
    with pytest.raises(ValueError):
        s.at(1, lambda: None)
