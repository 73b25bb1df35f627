"""Simulated EVM-like chains: mempool, gas-metered execution, receipts, finality.

A :class:`Chain` is a single-writer object. Only :meth:`Chain.produce_block`
mutates contract state, and it is called by the simulator's clock. Everything
else (proofs, views, finality checks) reads.
"""

from __future__ import annotations

import copy
import logging
from collections import deque
from dataclasses import dataclass

from . import merkle
from .encoding import address_from, decode, digest, encode
from .vm import DEFAULT_GAS, GasMeter, GasSchedule, OutOfGas, Revert as VMRevert

log = logging.getLogger(__name__)

SUCCESS = "success"
REVERT = "revert"
ZERO_HASH = bytes(32)


class LedgerError(Exception):
    pass


class BadNonce(LedgerError):
    pass


class InsufficientBalance(LedgerError):
    pass


class UnknownHeight(LedgerError):
    pass


class NotFound(LedgerError):
    pass


class Revert(Exception):
    """Raised inside contract code; the enclosing transaction is rolled back."""


@dataclass(frozen=True)
class ChainConfig:
    chain_id: int
    block_time: int = 5_000
    max_txs_per_block: int = 4096
    confirmation_depth: int = 1
    fault_threshold_note: str = "1/3"
    offset: int = 0

    def __post_init__(self):
        if self.block_time <= 0:
            raise ValueError("block_time must be positive")
        if self.max_txs_per_block < 1:
            raise ValueError("max_txs_per_block must be >= 1")
        if self.confirmation_depth < 0:
            raise ValueError("confirmation_depth must be >= 0")


@dataclass(frozen=True)
class Transaction:
    chain_id: int
    sender: str
    nonce: int
    target: str
    calldata: bytes
    gas_limit: int = 10_000_000
    gas_price: int = 1

    def __post_init__(self):
        if self.gas_limit <= 0:
            raise ValueError("gas_limit must be positive")

    @property
    def fee(self) -> int:
        return self.gas_limit * self.gas_price

    def encode(self) -> bytes:
        return encode(["tx", self.chain_id, self.sender, self.nonce, self.target,
                       self.calldata, self.gas_limit, self.gas_price])

    @property
    def hash(self) -> bytes:
        return digest("tx", self.chain_id, self.sender, self.nonce, self.target,
                      self.calldata, self.gas_limit, self.gas_price)

    def call(self):
        method, args = decode(self.calldata)
        return method, args


def calldata(method: str, *args) -> bytes:
    return encode([method, list(args)])


@dataclass(frozen=True)
class EventLog:
    emitter: str
    topic: str
    payload: bytes

    def to_wire(self) -> list:
        return [self.emitter, self.topic, self.payload]


@dataclass(frozen=True)
class Receipt:
    tx_hash: bytes
    status: str
    gas_used: int
    logs: tuple[EventLog, ...] = ()

    def encode(self) -> bytes:
        return encode([self.tx_hash, self.status, self.gas_used,
                       [lg.to_wire() for lg in self.logs]])

    @classmethod
    def decode(cls, raw: bytes) -> "Receipt":
        tx_hash, status, gas_used, logs = decode(raw)
        return cls(tx_hash, status, gas_used, tuple(EventLog(*lg) for lg in logs))


@dataclass(frozen=True)
class Block:
    chain_id: int
    height: int
    parent_hash: bytes
    timestamp: int
    tx_hashes: tuple[bytes, ...]
    receipts_root: bytes
    gas_used: int

    def header_fields(self) -> list:
        return [self.chain_id, self.height, self.parent_hash, self.timestamp,
                list(self.tx_hashes), self.receipts_root, self.gas_used]

    @property
    def hash(self) -> bytes:
        return digest("block", *self.header_fields())

    def to_wire(self) -> list:
        return self.header_fields()

    @classmethod
    def from_wire(cls, raw) -> "Block":
        chain_id, height, parent, ts, txs, root, gas = raw
        return cls(chain_id, height, parent, ts, tuple(txs), root, gas)


_ATOMS = (int, str, bytes, bool, type(None))


def _copy_state(value):
    # sets hold hashes and tuples of strings; flat mappings of atoms copy shallowly
    if isinstance(value, set):
        return set(value)
    if isinstance(value, dict) and all(isinstance(v, _ATOMS) for v in value.values()):
        return dict(value)
    return copy.deepcopy(value)


_MISSING = object()


@dataclass
class Account:
    balance: int = 0
    nonce: int = 0


class Contract:
    """Base for contracts. Subclasses list their mutable attributes in STATE."""

    STATE: tuple[str, ...] = ()
    kind = "native"

    def __init__(self, address: str):
        self.address = address

    def snapshot(self):
        return {name: _copy_state(getattr(self, name)) for name in self.STATE}

    def restore(self, snap) -> None:
        for name, value in snap.items():
            setattr(self, name, value)

    def dispatch(self, ctx: "TxContext", method: str, args: list):
        fn = getattr(self, "tx_" + method, None)
        if fn is None:
            raise Revert(f"{type(self).__name__} has no method {method!r}")
        return fn(ctx, *args)

    def on_block_start(self, chain: "Chain", height: int) -> list[bytes]:
        """Hook run before a block's transactions. Returns internal calldata to run."""
        return []


class TxContext:
    """Per-transaction execution context: gas, logs, rollback journal."""

    def __init__(self, chain: "Chain", tx: Transaction, height: int, timestamp: int):
        self.chain = chain
        self.tx = tx
        self.sender = tx.sender
        self.height = height
        self.timestamp = timestamp
        self.gas = GasMeter(tx.gas_limit)
        self.logs: list[EventLog] = []
        self.followups: list[tuple[str, str, bytes, int]] = []
        self.revert_reason = ""
        self._touched: dict[int, tuple[Contract, dict]] = {}
        self._items: dict[tuple, tuple] = {}
        self._deployed: list[str] = []

    @property
    def schedule(self) -> GasSchedule:
        return self.chain.gas

    def charge(self, amount: int) -> None:
        self.gas.charge(amount)

    def touch(self, contract: Contract) -> None:
        if id(contract) not in self._touched:
            self._touched[id(contract)] = (contract, contract.snapshot())

    def touch_item(self, container: dict, key) -> None:
        """Journal one entry of a large mapping instead of the whole contract."""
        k = (id(container), key)
        if k not in self._items:
            self._items[k] = (container, key, copy.deepcopy(container.get(key, _MISSING)))

    def touch_attr(self, obj, name: str) -> None:
        k = (id(obj), name)
        if k not in self._items:
            self._items[k] = (obj, name, copy.deepcopy(getattr(obj, name)))

    def emit(self, emitter: str, topic: str, payload: bytes) -> None:
        self.charge(self.schedule.event_cost(payload))
        self.logs.append(EventLog(emitter, topic, payload))

    def deploy(self, contract_factory, deployer: str, code_program=None) -> str:
        """Create a contract at an address derived from (chain, deployer, nonce)."""
        addr = self.chain.fresh_address(deployer)
        contract = contract_factory(addr)
        if code_program is not None:
            self.charge(self.schedule.deploy_cost(code_program))
        self.chain.contracts[addr] = contract
        self._deployed.append(addr)
        return addr

    def followup(self, sender: str, target: str, data: bytes, gas_limit: int) -> None:
        """Queue an internal transaction from contract ``sender`` to run right after this one."""
        self.followups.append((sender, target, data, gas_limit))

    def rollback(self) -> None:
        for contract, snap in self._touched.values():
            contract.restore(snap)
        for target, key, old in reversed(list(self._items.values())):
            if isinstance(target, dict):
                if old is _MISSING:
                    target.pop(key, None)
                else:
                    target[key] = old
            else:
                setattr(target, key, old)
        for addr in self._deployed:
            self.chain.contracts.pop(addr, None)
        self.logs.clear()
        self.followups.clear()


class Chain:
    def __init__(self, config: ChainConfig, gas: GasSchedule = DEFAULT_GAS):
        self.config = config
        self.chain_id = config.chain_id
        self.gas = gas
        self.accounts: dict[str, Account] = {}
        self.contracts: dict[str, Contract] = {}
        self.mempool: deque[Transaction] = deque()
        self._pending_nonce: dict[str, int] = {}
        self.blocks: list[Block] = []
        self.receipts: list[list[Receipt]] = []
        self.tx_index: dict[bytes, tuple[int, int]] = {}
        self.txs: dict[bytes, Transaction] = {}
        self._create_nonce: dict[str, int] = {}
        self._genesis()

    # -- setup -------------------------------------------------------------
    def _genesis(self) -> None:
        genesis = Block(self.chain_id, 0, ZERO_HASH, 0, (), merkle.EMPTY_ROOT, 0)
        self.blocks.append(genesis)
        self.receipts.append([])

    def fund(self, account: str, amount: int) -> None:
        self.accounts.setdefault(account, Account()).balance += amount

    def balance(self, account: str) -> int:
        return self.accounts.get(account, Account()).balance

    def fresh_address(self, deployer: str) -> str:
        n = self._create_nonce.get(deployer, 0)
        self._create_nonce[deployer] = n + 1
        return address_from(self.chain_id, deployer, n)

    def install(self, contract: Contract) -> str:
        """Genesis-style installation, outside any transaction and free of gas."""
        self.contracts[contract.address] = contract
        return contract.address

    # -- reads -------------------------------------------------------------
    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def block(self, height: int) -> Block:
        if not 0 <= height < len(self.blocks):
            raise UnknownHeight(f"chain {self.chain_id} has no block {height}")
        return self.blocks[height]

    def is_finalized(self, height: int) -> bool:
        if not 0 <= height <= self.height:
            raise UnknownHeight(f"chain {self.chain_id} has no block {height}")
        return self.height - height >= self.config.confirmation_depth

    def contract(self, addr: str) -> Contract:
        try:
            return self.contracts[addr]
        except KeyError:
            raise NotFound(f"no contract at {addr} on chain {self.chain_id}") from None

    def receipt(self, tx_hash: bytes) -> Receipt:
        if tx_hash not in self.tx_index:
            raise NotFound("transaction not included")
        h, i = self.tx_index[tx_hash]
        return self.receipts[h][i]

    def get_receipt_proof(self, tx_hash: bytes):
        if tx_hash not in self.tx_index:
            raise NotFound("transaction not included")
        h, i = self.tx_index[tx_hash]
        leaves = [r.encode() for r in self.receipts[h]]
        return self.blocks[h], self.receipts[h][i], merkle.prove(leaves, i)

    def next_nonce(self, sender: str) -> int:
        if sender in self._pending_nonce:
            return self._pending_nonce[sender]
        return self.accounts.get(sender, Account()).nonce

    def pending_calls(self, target: str):
        for tx in self.mempool:
            if tx.target == target:
                yield tx

    # -- writes ------------------------------------------------------------
    def submit_tx(self, tx: Transaction) -> bytes:
        if tx.chain_id != self.chain_id:
            raise BadNonce("transaction signed for another chain")
        expected = self.next_nonce(tx.sender)
        if tx.nonce != expected:
            raise BadNonce(f"{tx.sender}: nonce {tx.nonce}, expected {expected}")
        if self.balance(tx.sender) < tx.fee:
            raise InsufficientBalance(f"{tx.sender} cannot cover fee {tx.fee}")
        self.mempool.append(tx)
        self._pending_nonce[tx.sender] = expected + 1
        return tx.hash

    def send(self, sender: str, target: str, method: str, *args, gas_limit: int = 10_000_000) -> bytes:
        tx = Transaction(self.chain_id, sender, self.next_nonce(sender), target,
                         calldata(method, *args), gas_limit)
        return self.submit_tx(tx)

    def _system_tx(self, sender: str, target: str, data: bytes, gas_limit: int) -> Transaction:
        acct = self.accounts.setdefault(sender, Account())
        tx = Transaction(self.chain_id, sender, acct.nonce, target, data, gas_limit)
        return tx

    def produce_block(self, timestamp: int) -> Block:
        height = self.height + 1
        receipts: list[Receipt] = []
        included: list[Transaction] = []

        def run(tx: Transaction) -> None:
            receipt, follow = self._execute(tx, height, timestamp)
            included.append(tx)
            receipts.append(receipt)
            for sender, target, data, limit in follow:
                run(self._system_tx(sender, target, data, limit))

        for addr in sorted(self.contracts):
            for data in self.contracts[addr].on_block_start(self, height):
                run(self._system_tx(addr, addr, data, 50_000_000))

        taken = 0
        while self.mempool and taken < self.config.max_txs_per_block:
            taken += 1
            run(self.mempool.popleft())

        for sender in list(self._pending_nonce):
            if self._pending_nonce[sender] <= self.accounts.get(sender, Account()).nonce:
                del self._pending_nonce[sender]

        leaves = [r.encode() for r in receipts]
        block = Block(self.chain_id, height, self.head.hash, timestamp,
                      tuple(tx.hash for tx in included), merkle.build_root(leaves),
                      sum(r.gas_used for r in receipts))
        self.blocks.append(block)
        self.receipts.append(receipts)
        for i, tx in enumerate(included):
            self.tx_index[tx.hash] = (height, i)
            self.txs[tx.hash] = tx
        return block

    def _execute(self, tx: Transaction, height: int, timestamp: int):
        acct = self.accounts.setdefault(tx.sender, Account())
        acct.nonce += 1
        ctx = TxContext(self, tx, height, timestamp)
        status = SUCCESS
        try:
            ctx.charge(self.gas.tx_base + self.gas.calldata_byte * len(tx.calldata))
            target = self.contracts.get(tx.target)
            if target is None:
                raise Revert(f"no contract at {tx.target}")
            method, args = tx.call()
            target.dispatch(ctx, method, args)
        except (Revert, VMRevert, OutOfGas, LedgerError, ValueError, TypeError) as exc:
            log.debug("chain %s tx %s reverted: %s", self.chain_id, tx.hash.hex()[:8], exc)
            ctx.rollback()
            status = REVERT
            ctx.revert_reason = str(exc)
        gas_used = min(ctx.gas.used, tx.gas_limit)
        acct.balance -= min(acct.balance, gas_used * tx.gas_price)
        return Receipt(tx.hash, status, gas_used, tuple(ctx.logs)), list(ctx.followups)

    # -- audit helpers -----------------------------------------------------
    def check_conservation(self) -> bool:
        return all(b.gas_used == sum(r.gas_used for r in rs)
                   for b, rs in zip(self.blocks, self.receipts))
