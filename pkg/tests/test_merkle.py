import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from xchainsim import merkle
from xchainsim.merkle import (EMPTY_ROOT, IndexOutOfRange, ReceiptProof, build_root, leaf_hash,
                              node_hash, prove, verify)


# Independent oracle: recursive split at the largest power of two below n.
# With odd-node promotion, this is the same tree as the level-by-level build.
def _h(b):
    return hashlib.sha256(b).digest()


def oracle_root(leaves):
    if not leaves:
        return _h(b"")
    if len(leaves) == 1:
        return _h(b"\x00" + leaves[0])
    k = 1
    while k * 2 < len(leaves):
        k *= 2
    return _h(b"\x01" + oracle_root(leaves[:k]) + oracle_root(leaves[k:]))


def oracle_path_len(n, i):
    if n <= 1:
        return 0
    k = 1
    while k * 2 < n:
        k *= 2
    if i < k:
        return 1 + oracle_path_len(k, i)
    return 1 + oracle_path_len(n - k, i - k) if n - k >= 1 else 0


def leaves_of(n):
    return [f"leaf-{i}".encode() for i in range(n)]


def test_empty_root_is_hash_of_empty_sentinel():
    assert build_root([]) == EMPTY_ROOT == _h(b"")


def test_single_leaf_root():
    assert build_root([b"x"]) == leaf_hash(b"x")


def test_six_leaves_match_oracle():
    leaves = [bytes([i]) * (i + 1) for i in range(6)]
    assert build_root(leaves) == oracle_root(leaves)


@given(st.lists(st.binary(max_size=16), max_size=70))
def test_root_matches_oracle(leaves):
    assert build_root(leaves) == oracle_root(leaves)


def test_single_leaf_proof_is_empty():
    assert prove([b"x"], 0).siblings == ()


def test_perfect_tree_has_two_siblings():
    for i in range(4):
        assert len(prove(leaves_of(4), i).siblings) == 2


def test_five_leaves_index_four_is_promoted():
    # the fifth leaf is promoted twice and meets a single sibling at the top
    p = prove(leaves_of(5), 4)
    assert len(p.siblings) == oracle_path_len(5, 4) == 1


@pytest.mark.parametrize("n", range(1, 20))
def test_path_lengths_match_oracle(n):
    for i in range(n):
        assert len(prove(leaves_of(n), i).siblings) == oracle_path_len(n, i)


@pytest.mark.parametrize("n", range(1, 9))
def test_roundtrip_and_cross_leaf_rejection(n):
    leaves = leaves_of(n)
    root = build_root(leaves)
    for i in range(n):
        p = prove(leaves, i)
        assert verify(root, leaves[i], p)
        for j in range(n):
            if j != i:
                assert not verify(root, leaves[j], p)


def test_bit_flip_rejected():
    leaves = leaves_of(7)
    root = build_root(leaves)
    p = prove(leaves, 3)
    leaf = bytearray(leaves[3])
    for bit in range(len(leaf) * 8):
        mutated = bytearray(leaf)
        mutated[bit // 8] ^= 1 << (bit % 8)
        assert not verify(root, bytes(mutated), p)


def test_out_of_range_index():
    with pytest.raises(IndexOutOfRange):
        prove(leaves_of(3), 3)


def test_second_preimage_guard():
    leaves = leaves_of(4)
    root = build_root(leaves)
    left = node_hash(leaf_hash(leaves[0]), leaf_hash(leaves[1]))
    right = node_hash(leaf_hash(leaves[2]), leaf_hash(leaves[3]))
    assert root == node_hash(left, right)
    # presenting an internal node's preimage as a leaf of a 2-leaf tree must fail
    fake = ReceiptProof(0, 2, ((right, merkle.RIGHT),), root)
    assert not verify(root, left + right, fake)
    assert not verify(root, leaf_hash(leaves[0]) + leaf_hash(leaves[1]), fake)


def test_wire_roundtrip():
    p = prove(leaves_of(6), 5)
    assert ReceiptProof.from_wire(p.to_wire()) == p


@settings(max_examples=200)
@given(st.lists(st.binary(min_size=1, max_size=12), min_size=1, max_size=64), st.data())
def test_soundness_under_mutation(leaves, data):
    i = data.draw(st.integers(0, len(leaves) - 1))
    root = build_root(leaves)
    p = prove(leaves, i)
    assert verify(root, leaves[i], p)
    what = data.draw(st.sampled_from(["leaf", "root", "sibling", "index", "count"]))
    leaf, proof, r = leaves[i], p, root
    if what == "leaf":
        b = bytearray(leaf)
        b[data.draw(st.integers(0, len(b) - 1))] ^= 1 << data.draw(st.integers(0, 7))
        leaf = bytes(b)
    elif what == "root":
        r = bytes([root[0] ^ 1]) + root[1:]
        proof = ReceiptProof(p.leaf_index, p.leaf_count, p.siblings, r)
    elif what == "sibling":
        if not p.siblings:
            return
        k = data.draw(st.integers(0, len(p.siblings) - 1))
        d, side = p.siblings[k]
        sibs = list(p.siblings)
        sibs[k] = (bytes([d[0] ^ 0x80]) + d[1:], side)
        proof = ReceiptProof(p.leaf_index, p.leaf_count, tuple(sibs), p.declared_root)
    elif what == "index":
        j = data.draw(st.integers(0, len(leaves) - 1))
        if leaves[j] == leaves[i] and j != i or j == i:
            return
        proof = ReceiptProof(j, p.leaf_count, p.siblings, p.declared_root)
    else:
        c = data.draw(st.integers(1, 70))
        if c == p.leaf_count:
            return
        proof = ReceiptProof(p.leaf_index, c, p.siblings, p.declared_root)
    assert not verify(r, leaf, proof)


def test_garbage_proofs_do_not_raise():
    root = build_root(leaves_of(3))
    assert not verify(root, b"x", ReceiptProof(0, 3, (("nope", "left"),), root))
    assert not verify(root, b"x", ReceiptProof(-1, 3, (), root))
