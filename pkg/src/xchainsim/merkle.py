"""Binary Merkle tree over byte-string leaves.

Leaves are hashed as ``H(0x00 || leaf)`` and internal nodes as
``H(0x01 || left || right)``. An odd node at the end of a level is promoted
unchanged to the next level, never paired with itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoding import sha256

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_ROOT = sha256(b"")

LEFT = "left"
RIGHT = "right"


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class ReceiptProof:
    leaf_index: int
    leaf_count: int
    siblings: tuple[tuple[bytes, str], ...] = field(default_factory=tuple)
    declared_root: bytes = EMPTY_ROOT

    def to_wire(self) -> list:
        return [self.leaf_index, self.leaf_count,
                [[d, s] for d, s in self.siblings], self.declared_root]

    @classmethod
    def from_wire(cls, raw) -> "ReceiptProof":
        index, count, sibs, root = raw
        return cls(index, count, tuple((d, s) for d, s in sibs), root)


def leaf_hash(leaf: bytes) -> bytes:
    return sha256(LEAF_PREFIX + leaf)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(NODE_PREFIX + left + right)


def _levels(leaves: list[bytes]) -> list[list[bytes]]:
    level = [leaf_hash(x) for x in leaves]
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        levels.append(nxt)
        level = nxt
    return levels


def build_root(leaves) -> bytes:
    leaves = list(leaves)
    if not leaves:
        return EMPTY_ROOT
    return _levels(leaves)[-1][0]


def path_shape(index: int, count: int) -> list[str]:
    """Sides of the siblings met walking from leaf ``index`` to the root."""
    sides = []
    while count > 1:
        if index % 2:
            sides.append(LEFT)
        elif index + 1 < count:
            sides.append(RIGHT)
        index //= 2
        count = (count + 1) // 2
    return sides


def prove(leaves, index: int) -> ReceiptProof:
    leaves = list(leaves)
    if not 0 <= index < len(leaves):
        raise IndexOutOfRange(f"leaf {index} not in [0, {len(leaves)})")
    levels = _levels(leaves)
    siblings = []
    i = index
    for level in levels[:-1]:
        if i % 2:
            siblings.append((level[i - 1], LEFT))
        elif i + 1 < len(level):
            siblings.append((level[i + 1], RIGHT))
        i //= 2
    return ReceiptProof(index, len(leaves), tuple(siblings), levels[-1][0])


def verify(root: bytes, leaf: bytes, proof: ReceiptProof) -> bool:
    try:
        if proof.declared_root != root:
            return False
        if not 0 <= proof.leaf_index < proof.leaf_count:
            return False
        sides = path_shape(proof.leaf_index, proof.leaf_count)
        if [s for _, s in proof.siblings] != sides:
            return False
        acc = leaf_hash(bytes(leaf))
        for sib, side in proof.siblings:
            if not isinstance(sib, (bytes, bytearray)) or len(sib) != 32:
                return False
            acc = node_hash(sib, acc) if side == LEFT else node_hash(acc, sib)
        return acc == root
    except (TypeError, ValueError, AttributeError):
        return False


def proof_hash_ops(proof: ReceiptProof) -> int:
    """Number of hash evaluations verification performs (for gas metering)."""
    return 1 + len(proof.siblings)
